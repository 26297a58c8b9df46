use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::treebank::{Tree, Treebank};

/// Corrupts a binary tree with random rotations. Nodes are visited top-down;
/// each node with at least one internal child is rotated with probability
/// `rate` (towards a random internal child when both qualify) before its
/// children are visited. The leaf sequence never changes.
pub fn rotate_noise<R: Rng>(t: &Tree, rate: f64, rng: &mut R) -> Tree {
    match t {
        Tree::Leaf(tok) => Tree::Leaf(tok.clone()),
        Tree::Node { children, .. } if children.len() == 2 => {
            let (l, r) = (&children[0], &children[1]);
            let node = match (l.is_leaf(), r.is_leaf()) {
                (true, true) => Tree::pair(l.clone(), r.clone()),
                (left_leaf, right_leaf) => {
                    if rng.gen::<f64>() < rate {
                        let rotate_right = match (left_leaf, right_leaf) {
                            (false, true) => true,
                            (true, false) => false,
                            _ => rng.gen::<bool>(),
                        };
                        if rotate_right {
                            // ((a b) c) -> (a (b c))
                            let (a, b) = split(l);
                            Tree::pair(a, Tree::pair(b, r.clone()))
                        } else {
                            // (a (b c)) -> ((a b) c)
                            let (b, c) = split(r);
                            Tree::pair(Tree::pair(l.clone(), b), c)
                        }
                    } else {
                        Tree::pair(l.clone(), r.clone())
                    }
                }
            };
            let (a, b) = split(&node);
            Tree::pair(rotate_noise(&a, rate, rng), rotate_noise(&b, rate, rng))
        }
        Tree::Node { children, label } => Tree::Node {
            label: label.clone(),
            children: children.iter().map(|c| rotate_noise(c, rate, rng)).collect(),
        },
    }
}

fn split(t: &Tree) -> (Tree, Tree) {
    let c = t.children();
    (c[0].clone(), c[1].clone())
}

/// `n_c` noisy copies of a binary gold treebank. Member `k` draws from its
/// own random stream, so members are independent and reproducible.
pub fn simulate_ensemble(gold: &Treebank, n_c: usize, rate: f64, seed: u64) -> Result<Vec<Treebank>> {
    (0..n_c)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let trees = gold.iter().map(|t| rotate_noise(t, rate, &mut rng)).collect();
            Treebank::new(trees, format!("simulated member {k} (rate {rate}, seed {seed})"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_identity_up_to_labels() {
        let t: Tree = "(S (NP a b) (VP c (PP d e)))".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(rotate_noise(&t, 0.0, &mut rng), t.strip_labels());
    }

    #[test]
    fn full_rate_rotates_root() {
        let t: Tree = "(_ (_ a b) c)".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(rotate_noise(&t, 1.0, &mut rng).to_string(), "(_ a (_ b c))");
    }

    #[test]
    fn noise_keeps_leaves_and_binarity() {
        let t: Tree = "(_ (_ (_ a b) (_ c d)) (_ e (_ f (_ g h))))".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rotate_noise(&t, 0.5, &mut rng);
            assert!(n.is_binary());
            assert_eq!(n.leaves(), t.leaves());
        }
    }
}
