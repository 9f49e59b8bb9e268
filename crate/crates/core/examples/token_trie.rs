//! Builds a token trie over a multi-byte vocabulary and prints the
//! probability mass under each node for one next-token distribution.
//!
//! `cargo run --example token_trie`

use constrained_smc::trie::ROOT;
use constrained_smc::{TokenDistribution, TokenTrie, Vocabulary};

fn main() {
    let vocab = Vocabulary::merged(&["a", "ab", "abc", "b", "ba", "c"]).expect("valid tokens");
    let trie = TokenTrie::build(&vocab).expect("no duplicates");
    let probs = [0.1f64, 0.2, 0.15, 0.25, 0.1, 0.1, 0.1];
    let dist = TokenDistribution::new(probs.iter().map(|p| p.ln()).collect()).expect("normalized");
    let mass = trie.compute_mass(&dist);

    println!("root mass {:.3} (EOS {:.3})", mass.mass(ROOT), mass.eos_mass());
    for node in 1..trie.len() as u32 {
        println!(
            "{:<4} depth {} mass {:.3} ends-here {:.3}",
            String::from_utf8_lossy(&trie.prefix(node)),
            trie.depth(node),
            mass.mass(node),
            mass.eot_mass(node),
        );
    }
    println!("{}", serde_json::to_string_pretty(&trie.to_json(Some(&mass))).expect("json"));
}
