//! Builds rubric tasks from a synthetic corpus, samples an episode and adds
//! masked-token and compile-outcome tasks.

use protofeed::lexnorm::LexConfig;
use protofeed::pipeline::program_corpus;
use protofeed::taskforge::{
    build_tasks_from_rubric, mix_augmented, outcome_histogram, sample_episode, synth_corpus,
};

fn main() {
    let data = synth_corpus(0, 8, 120);
    println!("{} records", data.len());
    let (tasks, report) = build_tasks_from_rubric(&data, &LexConfig::default(), 10, 10).unwrap();
    println!("{report:?}");
    for t in tasks.iter().take(5) {
        println!(
            "  {:<12} {:>3} neg {:>3} pos  {}",
            t.task_id,
            t.pools[0].len(),
            t.pools[1].len(),
            t.side.rubric
        );
    }

    let ep = sample_episode(&tasks[0], 10, 10, 7).unwrap();
    let (support, labels) = ep.support_flat();
    println!(
        "\nepisode {}: {} support, labels {:?}",
        ep.task_id,
        support.len(),
        labels
    );
    println!("first positive:\n{}", ep.support[1][0].tokens.to_source());

    let corpus = program_corpus(&tasks);
    println!("compile outcomes: {:?}", outcome_histogram(&corpus));
    let mixed = mix_augmented(&tasks, &corpus, 0.2, 10, 10, 1).unwrap();
    for t in &mixed[tasks.len()..] {
        println!(
            "  added {} ({:?}) classes {:?}",
            t.task_id, t.origin, t.class_labels
        );
    }
}
