use ndarray::array;
use np2m2::{nearmiss3_undersample, Dataset};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn six_point_instance_matches_exhaustive_search() {
    let x = array![
        [0.0, 0.0],
        [1.0, 0.2],
        [0.4, 0.1],
        [2.5, 0.0],
        [-1.5, 1.0],
        [0.6, -0.9],
    ];
    let labels = vec![1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
    let data = Dataset::new(x.clone(), labels.clone()).unwrap();
    let k = 1;
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let minority = [0usize, 1];
    let majority = [2usize, 3, 4, 5];

    // Candidates: each minority point's nearest majority point.
    let mut candidates: Vec<usize> = minority
        .iter()
        .map(|&i| {
            *majority
                .iter()
                .min_by(|&&a, &&b| dist(&rows[i], &rows[a]).total_cmp(&dist(&rows[i], &rows[b])))
                .unwrap()
        })
        .collect();
    candidates.sort();
    candidates.dedup();
    let score = |j: usize| {
        minority
            .iter()
            .map(|&i| dist(&rows[j], &rows[i]))
            .fold(f64::INFINITY, f64::min)
    };

    // Exhaustive search over every pair of majority rows: the retained pair
    // must consist of candidates (when there are enough of them) and then
    // maximize the summed score.
    let mut best: Option<(f64, [usize; 2])> = None;
    for a in 0..majority.len() {
        for b in a + 1..majority.len() {
            let pair = [majority[a], majority[b]];
            let in_pool = pair.iter().filter(|j| candidates.contains(j)).count();
            if in_pool < candidates.len().min(2) {
                continue;
            }
            let total = score(pair[0]) + score(pair[1]);
            if best.is_none_or(|(s, _)| total > s) {
                best = Some((total, pair));
            }
        }
    }
    let expected = best.unwrap().1;

    let out = nearmiss3_undersample(&data, 1.0, k).unwrap();
    assert_eq!(out.class_counts(), (2, 2));
    let kept: Vec<Vec<f64>> = (0..out.n_rows())
        .filter(|&i| out.labels()[i] < 0.0)
        .map(|i| out.row(i).to_vec())
        .collect();
    let want: Vec<Vec<f64>> = expected.iter().map(|&j| rows[j].clone()).collect();
    assert_eq!(kept, want);
}

#[test]
fn output_is_a_balanced_row_subset() {
    let data = np2m2::gen_linear_synthetic(40, 3, 2, 1.0, 5).unwrap();
    let pos: Vec<usize> = (0..data.n_rows()).filter(|&i| data.labels()[i] > 0.0).take(7).collect();
    let neg: Vec<usize> = (0..data.n_rows()).filter(|&i| data.labels()[i] < 0.0).collect();
    let rows: Vec<usize> = neg.iter().chain(&pos).copied().collect();
    let imbalanced = data.select_rows(&rows).unwrap();
    let out = nearmiss3_undersample(&imbalanced, 1.0, 3).unwrap();
    assert_eq!(out.class_counts(), (7, 7));
    for i in 0..out.n_rows() {
        let row = out.row(i);
        assert!((0..imbalanced.n_rows()).any(|j| imbalanced.row(j) == row));
    }
}

#[test]
fn single_class_is_rejected() {
    let data = Dataset::new(array![[0.0], [1.0]], vec![1.0, 1.0]).unwrap();
    assert!(nearmiss3_undersample(&data, 1.0, 3).is_err());
}
