use std::collections::HashSet;

use ctlab_core::augment::{ingest_paraphrases, merge_accepted, read_paraphrase_pairs, AugmentationBatch, ParaphrasePair};
use ctlab_core::corpus::{Corpus, Provenance, Sample};
use ctlab_core::preprocess::PreprocessConfig;
use ctlab_core::{LabelVector, ViolenceClass};

fn base() -> Corpus {
    let samples = (0..8)
        .map(|i| {
            let labels = if i < 4 { LabelVector::single(ViolenceClass::ALL[i]) } else { LabelVector::NON_VIOLENT };
            Sample::new(format!("b{i}"), format!("base text {i}"), labels)
        })
        .collect();
    Corpus::new(samples).unwrap()
}

#[test]
fn ten_pairs_with_two_duplicates() {
    let base = base();
    let pairs: Vec<ParaphrasePair> = (0..10)
        .map(|i| ParaphrasePair {
            source_id: format!("b{}", i % 8),
            // rows 3 and 7 repeat existing texts
            text: if i == 3 || i == 7 { format!("base text {}", i % 8) } else { format!("new wording {i}") },
        })
        .collect();
    let batch = ingest_paraphrases(&base, &pairs, &PreprocessConfig::default()).unwrap();

    // set-difference oracle
    let existing: HashSet<&str> = base.iter().map(|s| s.text.as_str()).collect();
    let fresh: Vec<&ParaphrasePair> = pairs.iter().filter(|p| !existing.contains(p.text.as_str())).collect();
    assert_eq!(batch.len(), fresh.len());
    assert_eq!(batch.len(), 8);
    let mut expected = [0usize; 4];
    for p in fresh {
        for (c, f) in expected.iter_mut().zip(base.get(&p.source_id).unwrap().labels.flags()) {
            *c += usize::from(f);
        }
    }
    assert_eq!(batch.counts(), expected);
    assert!(batch.samples().iter().all(|s| s.provenance == Provenance::Paraphrase));

    let merged = merge_accepted(&base, &batch).unwrap();
    assert_eq!(merged.len(), base.len() + batch.len());
    for c in 0..4 {
        assert_eq!(merged.counts()[c], base.counts()[c] + batch.counts()[c]);
    }
}

#[test]
fn five_mined_noncommunal_samples() {
    let base = base();
    let samples = (0..5)
        .map(|i| Sample::new(format!("m{i}"), format!("mined {i}"), LabelVector::single(ViolenceClass::Noncommunal)).with_provenance(Provenance::Mined))
        .collect();
    let batch = AugmentationBatch::new(samples).unwrap();
    let merged = merge_accepted(&base, &batch).unwrap();
    let before = base.counts();
    let after = merged.counts();
    assert_eq!(after[3], before[3] + 5);
    assert_eq!(&after[..3], &before[..3]);
}

#[test]
fn original_provenance_is_rejected_in_batches() {
    assert!(AugmentationBatch::new(vec![Sample::new("x", "t", LabelVector::NON_VIOLENT)]).is_err());
}

#[test]
fn paraphrase_csv_and_batch_files() {
    let pairs = read_paraphrase_pairs("source_id,paraphrased_text\nb1,\"hello, there\"\nb2,other\n".as_bytes()).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].text, "hello, there");
    let batch = ingest_paraphrases(&base(), &pairs, &PreprocessConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.jsonl");
    batch.save(&path).unwrap();
    let back = AugmentationBatch::load(&path).unwrap();
    assert_eq!(back.samples(), batch.samples());
}
