//! Max-sum decoding over a first-order chain. Forbidden transitions carry
//! `f64::NEG_INFINITY` and are never chosen while a finite path exists.

/// Scores for one sequence. `emissions` is `len × n_tags` row-major,
/// `transitions` is `n_tags × n_tags` indexed `[prev * n_tags + cur]`.
pub struct ChainScores<'a> {
    pub n_tags: usize,
    pub start: &'a [f64],
    pub transitions: &'a [f64],
    pub emissions: &'a [f64],
}

impl ChainScores<'_> {
    pub fn len(&self) -> usize {
        self.emissions.len() / self.n_tags
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    pub fn path_score(&self, path: &[usize]) -> f64 {
        let t = self.n_tags;
        let mut s = 0.0;
        for (i, &y) in path.iter().enumerate() {
            s += self.emissions[i * t + y];
            s += if i == 0 {
                self.start[y]
            } else {
                self.transitions[path[i - 1] * t + y]
            };
        }
        s
    }
}

/// Returns the best path and its score. Ties go to the lowest tag id, both
/// for back-pointers and for the final state.
pub fn decode(scores: &ChainScores<'_>) -> (Vec<usize>, f64) {
    let t = scores.n_tags;
    let n = scores.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut delta: Vec<f64> = (0..t).map(|y| scores.start[y] + scores.emissions[y]).collect();
    let mut next = vec![0.0; t];
    let mut back = vec![0usize; n * t];
    for i in 1..n {
        let em = &scores.emissions[i * t..(i + 1) * t];
        for cur in 0..t {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (prev, &d) in delta.iter().enumerate() {
                let s = d + scores.transitions[prev * t + cur];
                if s > best {
                    best = s;
                    arg = prev;
                }
            }
            next[cur] = best + em[cur];
            back[i * t + cur] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (y, &d) in delta.iter().enumerate() {
        if d > best {
            best = d;
            last = y;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i * t + path[i]];
    }
    (path, best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        let s = ChainScores {
            n_tags: 2,
            start: &[0.0, 0.0],
            transitions: &[0.0; 4],
            emissions: &[],
        };
        assert_eq!(decode(&s).0, Vec::<usize>::new());
    }

    #[test]
    fn ties_prefer_low_ids() {
        let s = ChainScores {
            n_tags: 3,
            start: &[0.0; 3],
            transitions: &[0.0; 9],
            emissions: &[0.0; 9],
        };
        assert_eq!(decode(&s).0, vec![0, 0, 0]);
    }

    #[test]
    fn forbidden_transition_is_avoided() {
        // tag 1 scores best everywhere but 1 -> 1 is forbidden
        let ninf = f64::NEG_INFINITY;
        let s = ChainScores {
            n_tags: 2,
            start: &[0.0, 0.0],
            transitions: &[0.0, 0.0, 0.0, ninf],
            emissions: &[0.0, 5.0, 0.0, 5.0, 0.0, 5.0],
        };
        let (path, score) = decode(&s);
        assert_eq!(path, vec![1, 0, 1]);
        assert_eq!(score, 10.0);
        assert_eq!(s.path_score(&path), score);
    }
}
