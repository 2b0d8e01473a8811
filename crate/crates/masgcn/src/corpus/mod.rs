//! Dataset ingestion: JSON-lines parsing, vocabulary construction,
//! tokenization, and the per-sentence feature bundle.

pub mod cache;

use crate::error::{Error, Result};
use crate::syntax::{self, DistanceMatrix, MaskStack, PartitionOneHot, TypeMatrix0};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
/// Dependency-type id reserved for labels unseen at train time. Id 0 means
/// "no edge" and is never assigned to a label.
pub const UNK_TYPE_ID: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub fn id(self) -> u32 {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Neutral => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Polarity> {
        match id {
            0 => Some(Polarity::Positive),
            1 => Some(Polarity::Negative),
            2 => Some(Polarity::Neutral),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One sentence/aspect pair exactly as stored on disk, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExample {
    pub tokens: Vec<String>,
    pub pos_tags: Vec<String>,
    pub aspect_from: usize,
    pub aspect_to: usize,
    pub polarity: Polarity,
    /// 0-based head index per token, -1 for the root.
    pub heads: Vec<i64>,
    /// Label of each token's incoming edge; the root carries "root".
    pub dep_labels: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    token: Vec<String>,
    pos: Vec<String>,
    head: Vec<i64>,
    deprel: Vec<String>,
    aspect_from: usize,
    aspect_to: usize,
    polarity: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabKind {
    Word,
    Pos,
    DepType,
    Polarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub kind: VocabKind,
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn with_specials(kind: VocabKind, specials: &[&str]) -> Self {
        let mut v = Vocabulary {
            kind,
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for s in specials {
            v.push(s);
        }
        v
    }

    fn push(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Lookup with the kind's fallback id for unseen tokens.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(match self.kind {
            VocabKind::Word | VocabKind::Pos => UNK_ID,
            VocabKind::DepType => UNK_TYPE_ID,
            VocabKind::Polarity => panic!("polarity lookup has no fallback"),
        })
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Number of real dependency types U: every id except the reserved
    /// "no edge" slot at 0.
    pub fn num_types(&self) -> usize {
        debug_assert_eq!(self.kind, VocabKind::DepType);
        self.len() - 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn from_tokens(kind: VocabKind, tokens: Vec<String>) -> Result<Self> {
        let mut v = Vocabulary {
            kind,
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for t in tokens {
            if v.token_to_id.contains_key(&t) {
                return Err(Error::Vocab(format!("duplicate vocabulary entry {:?}", t)));
            }
            v.push(&t);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabularies {
    pub word: Vocabulary,
    pub pos: Vocabulary,
    pub dep_type: Vocabulary,
    pub polarity: Vocabulary,
}

/// Integer-encoded example ready for feature computation.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedExample {
    pub word_ids: Vec<u32>,
    pub pos_ids: Vec<u32>,
    /// Signed offset to the nearest aspect token, clipped to the
    /// max_rel_pos used at tokenization time.
    pub rel_positions: Vec<i32>,
    pub aspect_mask: Vec<bool>,
    pub label_id: u32,
    pub heads: Vec<i64>,
    pub dep_label_ids: Vec<u32>,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    pub fn aspect_indices(&self) -> Vec<usize> {
        self.aspect_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Syntactic tensors for one sentence.
#[derive(Debug, Clone)]
pub struct SyntacticFeatures {
    pub dist: DistanceMatrix,
    pub masks: MaskStack,
    pub type0: TypeMatrix0,
    pub partition: PartitionOneHot,
}

/// Everything the model consumes for one sentence.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    pub tok: TokenizedExample,
    pub syn: SyntacticFeatures,
}

fn record_error(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Reads a JSON-lines dataset file and validates every record.
pub fn load_dataset(path: &Path, split: Split) -> Result<Vec<RawExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| record_error(path, lineno, e.to_string()))?;
        let n = rec.token.len();
        if n == 0 {
            return Err(record_error(path, lineno, "empty token list"));
        }
        for (name, len) in [
            ("pos", rec.pos.len()),
            ("head", rec.head.len()),
            ("deprel", rec.deprel.len()),
        ] {
            if len != n {
                return Err(record_error(
                    path,
                    lineno,
                    format!("field {} has {} entries for {} tokens", name, len, n),
                ));
            }
        }
        if !(rec.aspect_from < rec.aspect_to && rec.aspect_to <= n) {
            return Err(record_error(
                path,
                lineno,
                format!(
                    "aspect span [{}, {}) invalid for {} tokens",
                    rec.aspect_from, rec.aspect_to, n
                ),
            ));
        }
        let polarity = match rec.polarity.as_str() {
            "positive" => Polarity::Positive,
            "negative" => Polarity::Negative,
            "neutral" => Polarity::Neutral,
            other => {
                return Err(record_error(
                    path,
                    lineno,
                    format!("unknown polarity {:?}", other),
                ))
            }
        };
        syntax::validate_tree(&rec.head).map_err(|e| Error::InvalidTree {
            sentence: examples.len(),
            detail: format!("{} (line {})", e, lineno),
        })?;
        examples.push(RawExample {
            tokens: rec.token,
            pos_tags: rec.pos,
            aspect_from: rec.aspect_from,
            aspect_to: rec.aspect_to,
            polarity,
            heads: rec.head,
            dep_labels: rec.deprel,
        });
    }
    if examples.is_empty() {
        log::warn!("{} split at {} is empty", split, path.display());
    } else {
        let counts = polarity_counts(&examples);
        log::info!(
            "{} split: {} examples (positive {}, negative {}, neutral {})",
            split,
            examples.len(),
            counts[0],
            counts[1],
            counts[2]
        );
    }
    Ok(examples)
}

/// Counts indexed by [`Polarity::id`].
pub fn polarity_counts(examples: &[RawExample]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for ex in examples {
        counts[ex.polarity.id() as usize] += 1;
    }
    counts
}

/// Builds word/POS/dep-type/polarity vocabularies from the train split.
pub fn build_vocabularies(examples: &[RawExample]) -> Result<Vocabularies> {
    if examples.is_empty() {
        return Err(Error::EmptyInput(
            "cannot build vocabularies from an empty train split".into(),
        ));
    }
    let mut word = Vocabulary::with_specials(VocabKind::Word, &["<pad>", "<unk>"]);
    let mut pos = Vocabulary::with_specials(VocabKind::Pos, &["<pad>", "<unk>"]);
    // Id 0 marks "no edge" in the type matrix and is never a real label;
    // "root" is seeded so the root partition class always exists.
    let mut dep_type =
        Vocabulary::with_specials(VocabKind::DepType, &["<none>", "<unk-type>", "root"]);
    for ex in examples {
        for t in &ex.tokens {
            word.push(t);
        }
        for t in &ex.pos_tags {
            pos.push(t);
        }
        for t in &ex.dep_labels {
            dep_type.push(t);
        }
    }
    let mut polarity = Vocabulary::with_specials(VocabKind::Polarity, &[]);
    for name in ["positive", "negative", "neutral"] {
        polarity.push(name);
    }
    Ok(Vocabularies {
        word,
        pos,
        dep_type,
        polarity,
    })
}

/// Signed offset of token `i` to the nearest aspect token, clipped.
pub fn rel_position(i: usize, from: usize, to: usize, max_rel_pos: i32) -> i32 {
    let raw = if i < from {
        i as i64 - from as i64
    } else if i >= to {
        i as i64 - (to as i64 - 1)
    } else {
        0
    };
    raw.clamp(-max_rel_pos as i64, max_rel_pos as i64) as i32
}

pub fn tokenize(
    example: &RawExample,
    vocabs: &Vocabularies,
    max_rel_pos: i32,
) -> Result<TokenizedExample> {
    let n = example.tokens.len();
    if !(example.aspect_from < example.aspect_to && example.aspect_to <= n) {
        return Err(Error::Shape(format!(
            "aspect span [{}, {}) outside sentence of {} tokens",
            example.aspect_from, example.aspect_to, n
        )));
    }
    let word_ids = example.tokens.iter().map(|t| vocabs.word.id_or_unk(t)).collect();
    let pos_ids = example.pos_tags.iter().map(|t| vocabs.pos.id_or_unk(t)).collect();
    let dep_label_ids = example
        .dep_labels
        .iter()
        .map(|t| vocabs.dep_type.id_or_unk(t))
        .collect();
    let rel_positions = (0..n)
        .map(|i| rel_position(i, example.aspect_from, example.aspect_to, max_rel_pos))
        .collect();
    let aspect_mask = (0..n)
        .map(|i| i >= example.aspect_from && i < example.aspect_to)
        .collect();
    Ok(TokenizedExample {
        word_ids,
        pos_ids,
        rel_positions,
        aspect_mask,
        label_id: example.polarity.id(),
        heads: example.heads.clone(),
        dep_label_ids,
    })
}

/// Computes the syntactic tensors for one tokenized sentence.
pub fn compute_features(
    tok: &TokenizedExample,
    views: usize,
    num_types: usize,
) -> Result<SyntacticFeatures> {
    let dist = syntax::distances(&tok.heads)?;
    let masks = syntax::build_masks(&dist, views);
    let type0 = syntax::build_type_matrix(&tok.heads, &tok.dep_label_ids, num_types)?;
    let partition = syntax::build_partition(&tok.dep_label_ids, num_types)?;
    Ok(SyntacticFeatures {
        dist,
        masks,
        type0,
        partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn food_record() -> String {
        concat!(
            r#"{"token": ["the", "food", "was", "great"], "#,
            r#""pos": ["DT", "NN", "VBD", "JJ"], "#,
            r#""head": [1, 3, 3, -1], "#,
            r#""deprel": ["det", "nsubj", "cop", "root"], "#,
            r#""aspect_from": 1, "aspect_to": 2, "polarity": "positive"}"#
        )
        .to_string()
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{}", l).unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn loads_a_valid_record() {
        let f = write_lines(&[food_record()]);
        let got = load_dataset(f.path(), Split::Train).unwrap();
        assert_eq!(got.len(), 1);
        let ex = &got[0];
        assert_eq!(ex.tokens, ["the", "food", "was", "great"]);
        assert_eq!(ex.heads, [1, 3, 3, -1]);
        assert_eq!(ex.polarity, Polarity::Positive);
        assert_eq!(polarity_counts(&got), [1, 0, 0]);
    }

    #[test]
    fn empty_file_loads_empty() {
        let f = write_lines(&[]);
        assert!(load_dataset(f.path(), Split::Train).unwrap().is_empty());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_dataset(Path::new("/nonexistent/data.jsonl"), Split::Train).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn malformed_json_names_the_line() {
        let f = write_lines(&[food_record(), "{not json".into()]);
        let err = load_dataset(f.path(), Split::Train).unwrap_err();
        match err {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn length_mismatch_names_field_and_line() {
        let bad = food_record().replace(r#""pos": ["DT", "NN", "VBD", "JJ"]"#, r#""pos": ["DT"]"#);
        let f = write_lines(&[bad]);
        let err = load_dataset(f.path(), Split::Train).unwrap_err();
        match err {
            Error::MalformedRecord { line, detail, .. } => {
                assert_eq!(line, 1);
                assert!(detail.contains("pos"), "{}", detail);
            }
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn bad_tree_is_rejected() {
        let bad = food_record().replace("[1, 3, 3, -1]", "[1, 0, 3, -1]");
        let f = write_lines(&[bad]);
        let err = load_dataset(f.path(), Split::Train).unwrap_err();
        assert!(matches!(err, Error::InvalidTree { .. }), "{:?}", err);
    }

    #[test]
    fn bad_aspect_span_is_rejected() {
        let bad = food_record().replace(r#""aspect_from": 1, "aspect_to": 2"#, r#""aspect_from": 3, "aspect_to": 7"#);
        let f = write_lines(&[bad]);
        assert!(load_dataset(f.path(), Split::Train).is_err());
    }

    #[test]
    fn unknown_polarity_is_rejected() {
        let bad = food_record().replace("\"positive\"", "\"conflicted\"");
        let f = write_lines(&[bad]);
        assert!(load_dataset(f.path(), Split::Train).is_err());
    }

    #[test]
    fn load_is_deterministic() {
        let f = write_lines(&[food_record(), food_record()]);
        let a = load_dataset(f.path(), Split::Train).unwrap();
        let b = load_dataset(f.path(), Split::Train).unwrap();
        assert_eq!(a, b);
    }

    fn sample_examples() -> Vec<RawExample> {
        let f = write_lines(&[food_record()]);
        load_dataset(f.path(), Split::Train).unwrap()
    }

    #[test]
    fn vocab_ids_and_sizes() {
        let vocabs = build_vocabularies(&sample_examples()).unwrap();
        assert_eq!(vocabs.word.id_of("<pad>"), Some(PAD_ID));
        assert_eq!(vocabs.word.id_of("<unk>"), Some(UNK_ID));
        assert_eq!(vocabs.word.id_of("the"), Some(2));
        assert_eq!(vocabs.word.id_or_unk("pizza"), UNK_ID);
        assert_eq!(vocabs.pos.id_of("DT"), Some(2));
        // dep types: <none>=0, <unk-type>=1, root=2, then det/nsubj/cop
        assert_eq!(vocabs.dep_type.id_of("<none>"), Some(0));
        assert_eq!(vocabs.dep_type.id_of("root"), Some(2));
        assert_eq!(vocabs.dep_type.id_of("det"), Some(3));
        assert_eq!(vocabs.dep_type.id_or_unk("acl:relcl"), UNK_TYPE_ID);
        assert_eq!(vocabs.dep_type.num_types(), 5);
        assert_eq!(vocabs.polarity.len(), 3);
        assert_eq!(vocabs.polarity.id_of("positive"), Some(0));
        assert_eq!(vocabs.polarity.id_of("neutral"), Some(2));
    }

    #[test]
    fn dep_vocab_counts_match_label_set() {
        // labels {nsubj, dobj, root}: unk + root + nsubj + dobj = 4 types
        let mut exs = sample_examples();
        exs[0].dep_labels = vec!["nsubj".into(), "dobj".into(), "root".into(), "nsubj".into()];
        let vocabs = build_vocabularies(&exs).unwrap();
        assert_eq!(vocabs.dep_type.num_types(), 4);
        for label in ["nsubj", "dobj", "root"] {
            let id = vocabs.dep_type.id_of(label).unwrap();
            assert!((1..=4).contains(&id));
        }
    }

    #[test]
    fn empty_train_split_is_an_error() {
        assert!(build_vocabularies(&[]).is_err());
    }

    #[test]
    fn vocab_round_trips_through_token_list() {
        let vocabs = build_vocabularies(&sample_examples()).unwrap();
        for v in [&vocabs.word, &vocabs.pos, &vocabs.dep_type, &vocabs.polarity] {
            let rebuilt =
                Vocabulary::from_tokens(v.kind, v.tokens().to_vec()).unwrap();
            assert_eq!(&rebuilt, v);
            for (id, t) in v.tokens().iter().enumerate() {
                assert_eq!(v.id_of(t), Some(id as u32));
            }
        }
    }

    #[test]
    fn rel_positions_around_span() {
        let exs = sample_examples();
        let vocabs = build_vocabularies(&exs).unwrap();
        let tok = tokenize(&exs[0], &vocabs, 40).unwrap();
        assert_eq!(tok.rel_positions, [-1, 0, 1, 2]);
        assert_eq!(tok.aspect_mask, [false, true, false, false]);
        assert_eq!(tok.aspect_indices(), [1]);
    }

    #[test]
    fn rel_positions_zero_on_full_span() {
        let mut exs = sample_examples();
        exs[0].aspect_from = 0;
        exs[0].aspect_to = 4;
        let vocabs = build_vocabularies(&exs).unwrap();
        let tok = tokenize(&exs[0], &vocabs, 40).unwrap();
        assert_eq!(tok.rel_positions, [0, 0, 0, 0]);
    }

    #[test]
    fn rel_positions_clip_at_max() {
        let exs = sample_examples();
        let vocabs = build_vocabularies(&exs).unwrap();
        let tok = tokenize(&exs[0], &vocabs, 1).unwrap();
        assert_eq!(tok.rel_positions, [-1, 0, 1, 1]);
    }

    #[test]
    fn unknown_tokens_fall_back_to_unk() {
        let exs = sample_examples();
        let vocabs = build_vocabularies(&exs).unwrap();
        let mut other = exs[0].clone();
        other.tokens[3] = "spectacular".into();
        other.dep_labels[0] = "det:predet".into();
        let tok = tokenize(&other, &vocabs, 40).unwrap();
        assert_eq!(tok.word_ids[3], UNK_ID);
        assert_eq!(tok.dep_label_ids[0], UNK_TYPE_ID);
    }

    #[test]
    fn features_wire_through_syntax() {
        let exs = sample_examples();
        let vocabs = build_vocabularies(&exs).unwrap();
        let tok = tokenize(&exs[0], &vocabs, 40).unwrap();
        let syn = compute_features(&tok, 3, vocabs.dep_type.num_types()).unwrap();
        assert_eq!(syn.dist.d.nrows(), 4);
        assert_eq!(syn.masks.m.len(), 3);
        assert_eq!(syn.type0.ids.nrows(), 4);
        assert_eq!(syn.partition.y.ncols(), 5);
        for r in 0..4 {
            assert_eq!(syn.partition.y.row(r).sum(), 1.0);
        }
    }
}
