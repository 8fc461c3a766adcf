//! Decomposes the six-location demonstration automaton and the Kuramoto
//! complement automaton into reach-avoid elements.

use shsbarrier::catalog::{demo_automaton, kuramoto_complement_automaton};
use shsbarrier::dfa::{Dfa, RunEnumeration, SpecTask};

fn show(title: &str, spec: &SpecTask) -> shsbarrier::Result<()> {
    let d = &spec.dfa;
    let name = |r: &[usize]| r.iter().map(|&q| d.locations[q].as_str()).collect::<Vec<_>>().join(" -> ");
    println!("== {title}");
    println!("{} accepting runs{}", spec.runs.len(), if spec.truncated { " (truncated)" } else { "" });
    for r in &spec.runs {
        println!("  {}", name(r));
    }
    for sym in &d.alphabet {
        let runs = spec.decompose(sym)?;
        if runs.is_empty() {
            continue;
        }
        let elems: Vec<String> = runs
            .iter()
            .map(|(_, ts)| {
                if ts.is_empty() {
                    "immediate violation".to_string()
                } else {
                    ts.iter().map(|&t| spec.triple_name(t)).collect::<Vec<_>>().join(" ")
                }
            })
            .collect();
        println!("  start {sym}: {}", elems.join(" | "));
    }
    for p in &spec.partitions {
        let syms = |v: &[usize]| v.iter().map(|&s| d.alphabet[s].as_str()).collect::<Vec<_>>().join(",");
        println!(
            "  partition ({}, {}): {} triple(s), initial {{{}}}, unsafe {{{}}}",
            d.locations[p.key.0],
            d.locations[p.key.1],
            p.triples.len(),
            syms(&p.initial_symbols),
            syms(&p.unsafe_symbols)
        );
    }
    println!(
        "  switching automaton: {} locations, {} symbol transitions",
        spec.switching.locations.len(),
        spec.switching.symbol_transition_count()
    );
    Ok(())
}

fn main() -> shsbarrier::Result<()> {
    for (title, d) in [("demonstration automaton", demo_automaton()), ("Kuramoto", kuramoto_complement_automaton())] {
        let dfa = Dfa::from_spec(&d)?;
        let cfg = RunEnumeration::simple(&dfa);
        show(title, &SpecTask::build(dfa, &cfg)?)?;
    }
    Ok(())
}
