#![allow(dead_code)]

use hiersex::corpus::{BinaryLabel, LabeledSample, TaskExample};
use hiersex::math::fnv1a;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Vocabulary split by the parity of each word's FNV-1a hash.
pub fn parity_vocab(size: usize) -> [Vec<String>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for i in 0..size {
        let w = format!("tok{i}");
        out[(fnv1a(w.as_bytes()) & 1) as usize].push(w);
    }
    out
}

/// `n` five-token texts, half per class, each drawn from its class's half of
/// the vocabulary.
pub fn synthetic_examples(n: usize, seed: u64) -> Vec<TaskExample> {
    let vocab = parity_vocab(40);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = i % 2;
            let words: Vec<&str> =
                (0..5).map(|_| vocab[class].choose(&mut rng).unwrap().as_str()).collect();
            TaskExample { sample_id: format!("syn{i:03}"), text: words.join(" "), class }
        })
        .collect()
}

/// The same data as task-A samples (class 1 = sexist).
pub fn synthetic_samples(n: usize, seed: u64) -> Vec<LabeledSample> {
    synthetic_examples(n, seed)
        .into_iter()
        .map(|e| {
            let mut s = LabeledSample::unlabeled(e.sample_id, e.text);
            s.label_a = Some(if e.class == 1 { BinaryLabel::Sexist } else { BinaryLabel::NotSexist });
            s
        })
        .collect()
}

/// Task-A corpus CSV of the synthetic data. Sexist rows carry a placeholder
/// category and vector so the file satisfies the label hierarchy.
pub fn synthetic_csv(n: usize, seed: u64) -> String {
    let mut out = String::from("rewire_id,text,label_sexist,label_category,label_vector\n");
    for e in synthetic_examples(n, seed) {
        if e.class == 1 {
            out.push_str(&format!("{},{},sexist,2. derogation,2.1 descriptive attacks\n", e.sample_id, e.text));
        } else {
            out.push_str(&format!("{},{},not sexist,none,none\n", e.sample_id, e.text));
        }
    }
    out
}
