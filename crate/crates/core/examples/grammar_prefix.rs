//! Incremental prefix and membership checks with the Earley recognizer.
//!
//! `cargo run --example grammar_prefix`

use constrained_smc::{Grammar, Recognizer};

fn main() {
    let grammar = Grammar::parse(
        r#"
        E ::= E "+" T | T
        T ::= "1" | "(" E ")"
        "#,
    )
    .expect("valid grammar");
    let rec = Recognizer::new(grammar);

    let mut state = rec.initial();
    for &b in b"(1+1)+1" {
        state = rec.advance(&state, b);
        println!(
            "{:<8} prefix={:<5} member={:<5} next={:?}",
            String::from_utf8_lossy(&state.consumed()),
            state.is_valid_prefix(),
            state.is_complete_member(),
            String::from_utf8_lossy(&state.allowed_next_bytes()),
        );
    }

    for s in ["1+", "1)", "((1", "+1"] {
        let st = rec.state_for(s.as_bytes());
        println!("{s:<4} valid prefix: {}", st.is_valid_prefix());
    }
}
