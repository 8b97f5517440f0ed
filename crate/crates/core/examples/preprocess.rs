//! Tokenise raw posts, map emoji to words and find lexicon phrases.
//!
//! cargo run --example preprocess -- "some text 😢 with feelings"

use treehole::corpus::{preprocess_text, EmojiMap};
use treehole::lexicon::Lexicon;

fn main() -> treehole::Result<()> {
    let emoji = EmojiMap::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/emoji_map.tsv"))?;
    let lexicon = Lexicon::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/lexicon.tsv"))?;
    let inputs: Vec<String> = std::env::args().skip(1).collect();
    let inputs = if inputs.is_empty() {
        vec![
            "I just want to die 😢 nobody cares".to_string(),
            "Lunch was great, see you at 5pm!".to_string(),
        ]
    } else {
        inputs
    };
    for raw in inputs {
        let tokens = preprocess_text(&raw, &emoji);
        println!("{raw}\n  tokens: {tokens:?}");
        for hit in lexicon.find_hits(&tokens) {
            let phrase = tokens[hit.start..hit.start + hit.length].join(" ");
            println!("  hit at {}: {phrase:?}", hit.start);
        }
    }
    Ok(())
}
