use std::sync::LazyLock;

use proptest::prelude::*;
use sparsecoder::analysis::analyze;
use sparsecoder::tokenizer::{project_positions, train_tokenizer, PositionCaps, Tokenizer};

static TOKENIZER: LazyLock<Tokenizer> = LazyLock::new(|| {
    let corpus = [
        "import numpy as np\n\nclass Model:\n    def forward(self, inputs):\n        return np.dot(inputs, self.weights)\n",
        "def parse_args(argv):\n    parser = make_parser()\n    return parser.parse(argv)\n",
        "for index in range(10):\n    total = total + index  # running sum\n",
    ];
    train_tokenizer(corpus, 400).unwrap()
});

proptest! {
    #[test]
    fn spans_tile_the_source(src in "\\PC{0,200}") {
        let seq = TOKENIZER.encode(&src, usize::MAX);
        let mut at = 0;
        for s in &seq.spans {
            prop_assert_eq!(s.start, at);
            prop_assert!(s.end > s.start);
            at = s.end;
        }
        prop_assert_eq!(at, src.len());
        prop_assert_eq!(TOKENIZER.decode(&seq.token_ids), src.as_bytes().to_vec());
    }

    #[test]
    fn truncation_is_a_prefix(src in "[a-z_ .()=\\n]{0,200}", max in 0usize..64) {
        let full = TOKENIZER.encode(&src, usize::MAX);
        let cut = TOKENIZER.encode(&src, max);
        prop_assert_eq!(cut.n(), full.n().min(max));
        prop_assert_eq!(&cut.token_ids[..], &full.token_ids[..cut.n()]);
    }

    #[test]
    fn positions_point_at_identifier_starts(names in proptest::collection::vec("[a-z]{1,8}", 1..12)) {
        let src: String = names.iter().enumerate().map(|(k, n)| format!("def f{k}({n}):\n    return {n}\n")).collect();
        let seq = TOKENIZER.encode(&src, usize::MAX);
        let analysis = analyze(&src);
        let pos = project_positions(&seq, &analysis, &PositionCaps::default());
        prop_assert!(pos.global.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(pos.ident.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(pos.ident.iter().all(|p| !pos.global.contains(p)));
        prop_assert!(pos.global.len() <= 64);
        prop_assert!(pos.ident.len() <= PositionCaps::default().ident_limit(seq.n()));
        for &p in pos.global.iter().chain(&pos.ident) {
            let span = seq.spans[p];
            prop_assert!(analysis.occurrences.iter().any(|o| o.span.intersects(&span)));
        }
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tok.json");
    TOKENIZER.save(&path).unwrap();
    let back = Tokenizer::load(&path).unwrap();
    let src = "class Model:\n    pass\n";
    assert_eq!(back.encode(src, 100), TOKENIZER.encode(src, 100));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(json["vocab"].is_array() && json["merges"].is_array());
}
