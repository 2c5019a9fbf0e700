mod common;

use lensprobe::io::{self, CorpusFormat, CorpusSpec};
use lensprobe::Error;
use lensprobe_core::archive::ArchiveError;
use lensprobe_core::corpus::CorpusError;
use lensprobe_core::{Checkpoint, TokenId, Vocab};

#[test]
fn gpt2_vocab_loads_from_files() {
    let dir = common::gpt2_dir();
    let v = io::load_vocab(&dir.join("vocab.json"), &dir.join("merges.txt")).unwrap();
    assert_eq!(v.len(), 50257);
    assert_eq!(v.encode("Hello world"), [TokenId(15496), TokenId(995)]);
}

#[test]
fn missing_merges_names_the_path() {
    let dir = common::gpt2_dir();
    let missing = dir.join("no-such-merges.txt");
    let err = io::load_vocab(&dir.join("vocab.json"), &missing).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("no-such-merges.txt"), "{err}");
}

#[test]
fn saved_vocab_reloads_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let files = common::write_toy(tmp.path());
    let v = io::load_vocab(&files.vocab, &files.merges).unwrap();
    assert_eq!(v.len(), 456);
    let text = "the cat sat on the mat, didn't it?";
    let again = Vocab::byte_level(v.merges().to_vec()).unwrap();
    assert_eq!(v.encode(text), again.encode(text));
    assert_eq!(v.decode(&v.encode(text)).unwrap(), text);
}

#[test]
fn checkpoint_file_roundtrip_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let files = common::write_toy(tmp.path());
    let first = std::fs::read(&files.checkpoint).unwrap();
    let ckpt = io::load_checkpoint(&files.checkpoint).unwrap();
    let again = tmp.path().join("again.safetensors");
    io::save_checkpoint(&ckpt, &again).unwrap();
    assert_eq!(first, std::fs::read(&again).unwrap());
    let fresh = Checkpoint::toy(ckpt.config, lensprobe::TOY_SEED).unwrap();
    assert_eq!(ckpt.token_embedding, fresh.token_embedding);
}

#[test]
fn corrupt_archive_is_a_format_error_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.safetensors");
    std::fs::write(&path, 1000u64.to_le_bytes()).unwrap();
    match io::load_checkpoint(&path).unwrap_err() {
        e @ Error::Archive {
            source: ArchiveError::Format(_),
            ..
        } => assert!(e.to_string().contains("bad.safetensors")),
        other => panic!("unexpected error {other}"),
    }
}

fn spec(path: std::path::PathBuf, format: CorpusFormat, seq_len: usize) -> CorpusSpec {
    CorpusSpec {
        path,
        format,
        sample_size: 100,
        seed: 3,
        seq_len,
    }
}

#[test]
fn jsonl_and_lines_give_the_same_sequences() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(common::fixture_corpus()).unwrap();
    let jsonl: String = text
        .lines()
        .map(|l| serde_json::json!({"id": 1, "sentence": l}).to_string() + "\n")
        .collect();
    let path = tmp.path().join("corpus.jsonl");
    std::fs::write(&path, jsonl).unwrap();
    let v = Vocab::byte_level(Vec::new()).unwrap();
    let a = io::ingest(&spec(common::fixture_corpus(), CorpusFormat::Lines, 40), &v).unwrap();
    let field = CorpusFormat::Jsonl {
        field: "sentence".into(),
    };
    let b = io::ingest(&spec(path, field, 40), &v).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1.read, 60);
    assert!(a.0.iter().all(|r| r.tokens.len() == 40));
}

#[test]
fn jsonl_errors_report_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.jsonl");
    std::fs::write(&path, "{\"text\": \"fine\"}\n{\"body\": \"x\"}\n").unwrap();
    let fmt = CorpusFormat::Jsonl { field: "text".into() };
    let err = io::read_sentences(&path, &fmt).unwrap_err();
    assert!(matches!(err, Error::CorpusFormat { line: 2, .. }), "{err}");
    std::fs::write(&path, "{\"text\": 5}\n").unwrap();
    assert!(matches!(io::read_sentences(&path, &fmt), Err(Error::CorpusFormat { line: 1, .. })));
    std::fs::write(&path, "not json\n").unwrap();
    assert!(matches!(io::read_sentences(&path, &fmt), Err(Error::CorpusFormat { line: 1, .. })));
}

#[test]
fn crlf_lines_and_missing_final_newline() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.txt");
    std::fs::write(&path, "one\r\ntwo\r\n\r\nthree").unwrap();
    let s = io::read_sentences(&path, &CorpusFormat::Lines).unwrap();
    assert_eq!(s, ["one", "two", "", "three"]);
}

#[test]
fn empty_corpus_after_filtering() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("short.txt");
    std::fs::write(&path, "short\ntiny\n").unwrap();
    let v = Vocab::byte_level(Vec::new()).unwrap();
    let err = io::ingest(&spec(path, CorpusFormat::Lines, 40), &v).unwrap_err();
    assert!(matches!(err, Error::Corpus(CorpusError::Empty { read: 2, sampled: 2, .. })));
}

#[test]
fn ingest_is_deterministic_and_sampled() {
    let v = Vocab::byte_level(Vec::new()).unwrap();
    let mut s = spec(common::fixture_corpus(), CorpusFormat::Lines, 40);
    s.sample_size = 20;
    let a = io::ingest(&s, &v).unwrap();
    assert_eq!(a, io::ingest(&s, &v).unwrap());
    assert_eq!((a.1.read, a.1.sampled), (60, 20));
    assert!(a.1.kept <= 20);
    assert!(a.0.windows(2).all(|w| w[0].source_index < w[1].source_index));
}
