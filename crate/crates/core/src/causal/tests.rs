use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn dag(nodes: &[&str], edges: &[(&str, &str)]) -> Dag {
    Dag::new(nodes, edges).unwrap()
}

/// Oracle: enumerate every simple undirected path between `x` and `y` and test
/// each one against the textbook blocking rules.
fn d_sep_by_paths(g: &Dag, x: &str, y: &str, z: &[&str]) -> bool {
    let zs: BTreeSet<usize> = z.iter().map(|n| g.id(n).unwrap()).collect();
    let (xi, yi) = (g.id(x).unwrap(), g.id(y).unwrap());
    let mut paths = Vec::new();
    let mut stack = vec![(vec![xi], Vec::<bool>::new())];
    while let Some((nodes, fwd)) = stack.pop() {
        let cur = *nodes.last().unwrap();
        if cur == yi {
            paths.push((nodes, fwd));
            continue;
        }
        for &c in g.children(cur) {
            if !nodes.contains(&c) {
                let (mut n, mut f) = (nodes.clone(), fwd.clone());
                n.push(c);
                f.push(true);
                stack.push((n, f));
            }
        }
        for &p in g.parents(cur) {
            if !nodes.contains(&p) {
                let (mut n, mut f) = (nodes.clone(), fwd.clone());
                n.push(p);
                f.push(false);
                stack.push((n, f));
            }
        }
    }
    paths.iter().all(|(nodes, fwd)| {
        (1..nodes.len() - 1).any(|k| {
            let m = nodes[k];
            let collider = fwd[k - 1] && !fwd[k];
            if collider {
                let mut desc = g.descendants(m);
                desc.insert(m);
                desc.is_disjoint(&zs)
            } else {
                zs.contains(&m)
            }
        })
    })
}

#[test]
fn d_separation_basic_patterns() {
    let chain = dag(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
    assert!(chain.d_separated(&["A"], &["C"], &["B"]).unwrap());
    assert!(!chain.d_separated(&["A"], &["C"], &[]).unwrap());

    let fork = dag(&["A", "Z", "C"], &[("Z", "A"), ("Z", "C")]);
    assert!(!fork.d_separated(&["A"], &["C"], &[]).unwrap());
    assert!(fork.d_separated(&["A"], &["C"], &["Z"]).unwrap());

    let collider = dag(&["A", "B", "C"], &[("A", "B"), ("C", "B")]);
    assert!(!collider.d_separated(&["A"], &["C"], &["B"]).unwrap());
    assert!(collider.d_separated(&["A"], &["C"], &[]).unwrap());
    assert_eq!(
        collider.d_separated(&["A"], &["C"], &["B"]).unwrap(),
        d_sep_by_paths(&collider, "A", "C", &["B"])
    );
}

#[test]
fn collider_descendant_opens_path() {
    let g = dag(&["A", "B", "C", "D"], &[("A", "B"), ("C", "B"), ("B", "D")]);
    assert!(!g.d_separated(&["A"], &["C"], &["D"]).unwrap());
}

#[test]
fn d_separation_errors() {
    let g = dag(&["A", "B"], &[("A", "B")]);
    assert!(matches!(g.d_separated(&["A"], &["Q"], &[]), Err(Error::UnknownNode(n)) if n == "Q"));
    assert!(matches!(g.d_separated(&["A"], &["A"], &[]), Err(Error::Contract(_))));
}

#[test]
fn dag_rejects_bad_graphs() {
    assert!(Dag::new(&["A", "B"], &[("A", "B"), ("B", "A")]).is_err());
    assert!(Dag::new(&["A", "B"], &[("A", "B"), ("A", "B")]).is_err());
    assert!(matches!(Dag::new(&["A"], &[("A", "X")]), Err(Error::UnknownNode(_))));
    assert!(Dag::new(&["A"], &[("A", "A")]).is_err());
}

#[test]
fn vad_graph_backdoor_paths() {
    let g = build_vad_scm();
    assert_eq!(g.len(), 10);
    assert_eq!(g.edges().len(), 13);
    let has = |s: &str, y: &str, p: &str| {
        let want = Path::parse(p).unwrap();
        g.backdoor_paths(s, y).unwrap().contains(&want)
    };
    assert!(has("O", "Y_o", "O <- Z_o -> Y_o"));
    assert!(has("O", "A", "O <- B -> M -> A"));
    assert!(has("M", "A", "M <- B -> O -> A"));
    assert!(has("M", "Y_m", "M <- Z_m -> Y_m"));

    // I is a root: nothing can enter it.
    assert!(g.backdoor_paths("I", "E").unwrap().is_empty());
    for p in g.backdoor_paths("O", "A").unwrap() {
        assert_eq!(p.arrows[0], Arrow::Backward);
        assert_eq!(p.nodes.first().unwrap(), "O");
        assert_eq!(p.nodes.last().unwrap(), "A");
    }
}

#[test]
fn backdoor_paths_sorted_and_display() {
    let g = build_vad_scm();
    let paths = g.backdoor_paths("O", "A").unwrap();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
    assert_eq!(Path::parse("O <- Z_o -> Y_o").unwrap().to_string(), "O <- Z_o -> Y_o");
    assert!(g.backdoor_paths("O", "O").is_err());
    assert!(g.backdoor_paths("O", "nope").is_err());
}

#[test]
fn backdoor_paths_stable_under_node_permutation() {
    let g = build_vad_scm();
    let mut names: Vec<String> = g.names().to_vec();
    names.reverse();
    let edges = g.edges();
    let h = Dag::new(&names, &edges).unwrap();
    for s in ["O", "M", "A"] {
        for y in ["A", "E", "Y_o", "Y_m"] {
            if s != y {
                assert_eq!(g.backdoor_paths(s, y).unwrap(), h.backdoor_paths(s, y).unwrap());
            }
        }
    }
}

#[test]
fn confounded_triple_values() {
    let scm = confounded_triple();
    let obs = scm.observational("Y", &[("S", 1)]).unwrap();
    assert!((obs.p(1) - 0.880).abs() < 1e-12);
    let int = scm.interventional("Y", &[("S", 1)]).unwrap();
    assert!((int.p(1) - 0.800).abs() < 1e-12);
    // P(Z=1|S=0) = 0.05/0.5 = 0.1, so P(Y=1|S=0) = 0.2 * 0.1 = 0.02.
    let obs0 = scm.observational("Y", &[("S", 0)]).unwrap();
    assert!((obs0.p(1) - 0.02).abs() < 1e-12);
    let adj = scm.backdoor_adjust("Y", ("S", 1), &["Z"]).unwrap();
    assert!((adj.p(1) - 0.8).abs() < 1e-12);
}

#[test]
fn independence_and_root_interventions() {
    // S isolated from Y.
    let dag = Dag::new(&["S", "Y"], &[] as &[(&str, &str)]).unwrap();
    let scm = DiscreteScm::new(dag, vec![2, 3], vec![vec![vec![0.3, 0.7]], vec![vec![0.2, 0.5, 0.3]]]).unwrap();
    let marg = scm.observational("Y", &[]).unwrap();
    let cond = scm.observational("Y", &[("S", 1)]).unwrap();
    for (a, b) in marg.probs.iter().zip(&cond.probs) {
        assert!((a - b).abs() < 1e-15);
    }

    // Root treatment: doing equals seeing.
    let scm = confounded_triple();
    let see = scm.observational("Y", &[("Z", 1)]).unwrap();
    let act = scm.interventional("Y", &[("Z", 1)]).unwrap();
    for (a, b) in see.probs.iter().zip(&act.probs) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn no_backdoor_means_do_equals_see() {
    // Z -> Y only; S -> Y.
    let dag = Dag::new(&["Z", "S", "Y"], &[("Z", "Y"), ("S", "Y")]).unwrap();
    let rows = (0..4).map(|i| { let p = 0.1 + 0.2 * i as f64; vec![1.0 - p, p] }).collect();
    let scm = DiscreteScm::new(dag, vec![2, 2, 2], vec![vec![vec![0.4, 0.6]], vec![vec![0.25, 0.75]], rows]).unwrap();
    for s in 0..2 {
        let a = scm.observational("Y", &[("S", s)]).unwrap();
        let b = scm.interventional("Y", &[("S", s)]).unwrap();
        assert!((a.p(1) - b.p(1)).abs() < 1e-12);
    }
}

#[test]
fn zero_probability_conditioning_is_an_error() {
    let dag = Dag::new(&["S", "Y"], &[("S", "Y")]).unwrap();
    let scm = DiscreteScm::new(
        dag,
        vec![2, 2],
        vec![vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5], vec![0.5, 0.5]]],
    )
    .unwrap();
    assert!(matches!(scm.observational("Y", &[("S", 1)]), Err(Error::UndefinedConditional)));
}

#[test]
fn scm_validation() {
    let dag = Dag::new(&["S", "Y"], &[("S", "Y")]).unwrap();
    // wrong row count for Y
    assert!(DiscreteScm::new(dag.clone(), vec![2, 2], vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]]).is_err());
    // row not summing to one
    assert!(DiscreteScm::new(dag.clone(), vec![2, 2], vec![vec![vec![0.5, 0.6]], vec![vec![0.5, 0.5]; 2]]).is_err());
    // single-state variable
    assert!(DiscreteScm::new(dag, vec![1, 2], vec![vec![vec![1.0]], vec![vec![0.5, 0.5]]]).is_err());
}

#[test]
fn scm_json_round_trip() {
    let scm = confounded_triple();
    let json = serde_json::to_string(&scm.to_file()).unwrap();
    let back = DiscreteScm::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back.interventional("Y", &[("S", 1)]).unwrap(), scm.interventional("Y", &[("S", 1)]).unwrap());
    assert_eq!(serde_json::to_string(&back.to_file()).unwrap(), json);
}

#[test]
fn backdoor_criterion_examples() {
    let scm = confounded_triple();
    let g = scm.dag();
    assert!(g.satisfies_backdoor("S", "Y", &["Z"]).unwrap());
    assert!(!g.satisfies_backdoor("S", "Y", &[]).unwrap());
    let m = Dag::new(&["S", "M", "Y"], &[("S", "M"), ("M", "Y")]).unwrap();
    assert!(!m.satisfies_backdoor("S", "Y", &["M"]).unwrap());
}

fn names(g: &Dag) -> Vec<String> {
    g.names().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reachability_agrees_with_path_oracle(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scm = random_scm(&mut rng, 4096).unwrap();
        let g = scm.dag();
        let ns = names(g);
        let n = ns.len();
        let x = rng.gen_range(0..n);
        let y = (x + 1 + rng.gen_range(0..n - 1)) % n;
        let z: Vec<&str> = (0..n)
            .filter(|&i| i != x && i != y && rng.gen_bool(0.4))
            .map(|i| ns[i].as_str())
            .collect();
        prop_assert_eq!(
            g.d_separated(&[&ns[x]], &[&ns[y]], &z).unwrap(),
            d_sep_by_paths(g, &ns[x], &ns[y], &z)
        );
    }

    #[test]
    fn d_separation_implies_conditional_independence(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scm = random_scm(&mut rng, 512).unwrap();
        let g = scm.dag();
        let ns = names(g);
        let n = ns.len();
        let x = rng.gen_range(0..n);
        let y = (x + 1 + rng.gen_range(0..n - 1)) % n;
        let z: Vec<usize> = (0..n).filter(|&i| i != x && i != y && rng.gen_bool(0.5)).collect();
        let zn: Vec<&str> = z.iter().map(|&i| ns[i].as_str()).collect();
        if g.d_separated(&[&ns[x]], &[&ns[y]], &zn).unwrap() {
            // one random configuration of z
            let zs: Vec<(&str, usize)> = z.iter().map(|&i| (ns[i].as_str(), rng.gen_range(0..scm.card(&ns[i]).unwrap()))).collect();
            let base = scm.observational(&ns[y], &zs).unwrap();
            for xs in 0..scm.card(&ns[x]).unwrap() {
                let mut given = zs.clone();
                given.push((ns[x].as_str(), xs));
                let c = scm.observational(&ns[y], &given).unwrap();
                for (a, b) in c.probs.iter().zip(&base.probs) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}
