#![allow(dead_code)]

use ctlab_core::corpus::{Corpus, Sample};
use ctlab_core::rng;
use ctlab_core::{LabelVector, ViolenceClass};
use rand::seq::IndexedRandom;

const KEYWORDS: [[&str; 4]; 4] = [
    ["mandir", "masjid", "puja", "namaz"],
    ["pahari", "adivasi", "bangali", "chakma"],
    ["dol", "netar", "michil", "gosthi"],
    ["maro", "pitao", "bhango", "jalao"],
];
const FILLER: [&str; 8] = ["ami", "tumi", "aj", "kal", "ekhane", "okhane", "bhalo", "kotha"];

/// `n` samples, evenly spread over the four classes. Every text holds two
/// keywords of its class among filler words, so a bag-of-words model can
/// separate the classes perfectly.
pub fn separable_corpus(n: usize, seed: u64) -> Corpus {
    let mut r = rng::substream(seed, "fixture");
    let samples = (0..n)
        .map(|i| {
            let class = ViolenceClass::ALL[i % 4];
            let mut words: Vec<&str> = (0..4).map(|_| *FILLER.choose(&mut r).unwrap()).collect();
            words.insert(1, KEYWORDS[class.index()].choose(&mut r).unwrap());
            words.push(KEYWORDS[class.index()].choose(&mut r).unwrap());
            Sample::new(format!("s{i:04}"), words.join(" "), LabelVector::single(class))
        })
        .collect();
    Corpus::new(samples).unwrap()
}
