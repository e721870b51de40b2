use iqa_core::bank::{default_bank, load_bank, save_bank, BankError};
use iqa_core::{
    descriptive_score, similarity, AntonymPromptPair, EmbeddingProvider, MockProvider, PromptBank,
    Scorer,
};
use proptest::prelude::*;

#[test]
fn default_bank_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.json");
    save_bank(&default_bank(), &path).unwrap();
    let loaded = load_bank(&path).unwrap();
    assert_eq!(loaded, default_bank());
    assert_eq!(loaded.fingerprint(), default_bank().fingerprint());
}

#[test]
fn duplicate_label_in_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.json");
    std::fs::write(
        &path,
        r#"{"name":"dup","pairs":[
            {"feature_label":"contrast","positive_text":"High contrast.","negative_text":"Low contrast."},
            {"feature_label":"contrast","positive_text":"Vivid.","negative_text":"Dull."}]}"#,
    )
    .unwrap();
    let err = load_bank(&path).unwrap_err();
    assert!(matches!(err, BankError::DuplicateLabel { index: 1, .. }));
    assert!(err.to_string().contains("\"contrast\""));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_bank("/no/such/bank.json"), Err(BankError::Io { .. })));
}

#[test]
fn custom_two_pair_bank_flows_into_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.json");
    std::fs::write(
        &path,
        r#"{"name":"two","pairs":[
            {"feature_label":"contrast","positive_text":"A photo with strong contrast.","negative_text":"A washed-out photo."},
            {"feature_label":"color","positive_text":"A colorful photo.","negative_text":"A dull, colorless photo."}]}"#,
    )
    .unwrap();
    let bank = load_bank(&path).unwrap();
    assert_eq!(bank.len(), 2);
    assert_eq!(bank.labels(), ["contrast", "color"]);

    let mock = MockProvider::new(3, 32);
    let scorer = Scorer::from_provider(&mock, bank.clone()).unwrap();
    let img = mock.embed_bytes(iqa_core::provider::IMAGE_DOMAIN, b"some image");
    let report = scorer.score_embedding("x", &img).unwrap();

    // hand composition of the three formulas
    let texts = mock.embed_texts(&bank.prompts()).unwrap();
    let d: Vec<f64> = (0..2)
        .map(|i| {
            let sp = similarity(&img, &texts[2 * i]).unwrap();
            let sn = similarity(&img, &texts[2 * i + 1]).unwrap();
            descriptive_score(sp, sn, "").unwrap().value
        })
        .collect();
    assert_eq!(report.per_feature[0].value, d[0]);
    assert_eq!(report.per_feature[1].value, d[1]);
    assert!((report.overall - (d[0] + d[1]) / 2.0).abs() < 1e-12);
}

fn text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 .,'\"\\\\é]{1,30}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

proptest! {
    #[test]
    fn json_roundtrip_is_identity(name in text(), raw in prop::collection::vec((text(), text(), text()), 1..6)) {
        let mut pairs: Vec<AntonymPromptPair> = Vec::new();
        for (i, (label, pos, neg)) in raw.into_iter().enumerate() {
            if pos == neg { continue; }
            pairs.push(AntonymPromptPair::new(format!("{label}#{i}"), pos, neg));
        }
        prop_assume!(!pairs.is_empty());
        let bank = PromptBank::new(name, pairs).unwrap();
        let back = PromptBank::from_json(&bank.to_json()).unwrap();
        prop_assert_eq!(&back, &bank);
        prop_assert_eq!(back.fingerprint(), bank.fingerprint());
    }
}
