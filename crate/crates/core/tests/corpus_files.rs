use ctlab_core::corpus::{class_distribution, load_corpus, split, Corpus, Format, SplitSpec};
use ctlab_core::{Error, ViolenceClass};

const CSV: &str = "text,religio,ethno,nondenominational,noncommunal\n\
a,1,0,0,0\nb,0,1,0,0\nc,0,0,1,0\nd,0,0,0,1\ne,0,0,0,0\nf,1,1,0,0\n";

#[test]
fn five_column_release_loads_with_generated_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    std::fs::write(&path, CSV).unwrap();
    let c = load_corpus(&path, Format::Csv).unwrap();
    assert_eq!(c.len(), 6);
    assert!(c.get("row-000001").is_some());
    assert_eq!(c.counts(), [2, 2, 1, 1]);
    let d = class_distribution(&c, true).unwrap();
    assert_eq!(d.selected, 5);
    assert!((d.get(ViolenceClass::Religio) - 0.4).abs() < 1e-12);
}

#[test]
fn missing_file_names_the_path() {
    let err = Corpus::load(std::path::Path::new("/nonexistent/corpus.csv")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/corpus.csv"));
}

#[test]
fn csv_and_jsonl_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("data.csv");
    std::fs::write(&src, CSV).unwrap();
    let c = Corpus::load(&src).unwrap();
    for name in ["out.csv", "out.jsonl"] {
        let p = dir.path().join(name);
        c.save(&p).unwrap();
        let back = Corpus::load(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }
}

#[test]
fn split_file_round_trip_and_validation() {
    let text: String = std::iter::once("id,text,religio,ethno,nondenominational,noncommunal\n".to_string())
        .chain((0..50).map(|i| format!("s{i},t{i},{},0,0,0\n", i % 2)))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    std::fs::write(&path, text).unwrap();
    let c = Corpus::load(&path).unwrap();
    let s = split(&c, 11).unwrap();
    assert_eq!(s.sizes(), (34, 6, 10));
    let sp = dir.path().join("split.json");
    s.save(&sp).unwrap();
    let back = SplitSpec::load(&sp).unwrap();
    assert_eq!(back, s);
    back.validate_against(&c).unwrap();
    let mut broken = back.clone();
    broken.test.push(broken.train[0].clone());
    assert!(broken.validate_against(&c).is_err());
}
