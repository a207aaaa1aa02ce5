use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use snapq_core::vq::{
    assign_points, enumerate_neighbor_codewords, kmeans_plus_plus, lloyd_step, read_codebook, subspace_rng, train_codebook,
    train_codebook_with_history, write_codebook, Codebook, CodebookDump, KMeansParams, PqCode,
};
use snapq_core::Error;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect()
}

fn random_codebook(rng: &mut ChaCha8Rng, m: usize, k: usize, sub_dim: usize) -> Codebook {
    let raw: Vec<f32> = (0..m * k * sub_dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Codebook::new(m, k, sub_dim, raw).unwrap()
}

fn sq_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

fn all_codes(m: usize, k: usize) -> Vec<Vec<u16>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..k as u16).map(move |i| {
                    let mut c = prefix.clone();
                    c.push(i);
                    c
                })
            })
            .collect();
    }
    out
}

fn concat(cb: &Codebook, code: &[u16]) -> Vec<f32> {
    code.iter()
        .enumerate()
        .flat_map(|(m, &i)| cb.codeword(m, i as usize).to_vec())
        .collect()
}

/// Plain Lloyd iterations in f64, started from the given centers.
fn reference_kmeans(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, iters: usize) -> f64 {
    let nearest = |p: &[f64], centers: &[Vec<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let d: f64 = p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    };
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..iters {
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignment).filter(|(_, &a)| a == k).map(|(p, _)| p).collect();
            assert!(!members.is_empty(), "reference run hit an empty cluster");
            for j in 0..c.len() {
                c[j] = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        let done = next == assignment;
        assignment = next;
        if done {
            break;
        }
    }
    points.iter().map(|p| nearest(p, &centers).1).sum::<f64>() / points.len() as f64
}

#[test]
fn kmeans_matches_reference_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let data = gaussian(&mut rng, 64, 8);
    let (m, k, seed, iters) = (2, 4, 7, 50);
    let cb = train_codebook(&data, m, k, KMeansParams { iters, seed }).unwrap();
    let stats = cb.quantization_error(&data).unwrap();
    let sub_dim = 8 / m;
    let mut expected = 0.0;
    for s in 0..m {
        let flat: Vec<f32> = data.iter().flat_map(|v| v[s * sub_dim..(s + 1) * sub_dim].to_vec()).collect();
        let init = kmeans_plus_plus(&flat, sub_dim, k, &mut subspace_rng(seed, s));
        let centers = init.chunks(sub_dim).map(|c| c.iter().map(|&x| x as f64).collect()).collect();
        let points: Vec<Vec<f64>> = flat.chunks(sub_dim).map(|c| c.iter().map(|&x| x as f64).collect()).collect();
        let e = reference_kmeans(&points, centers, iters);
        assert!((stats.per_subspace_error[s] - e).abs() <= 1e-6 * e.max(1e-12), "subspace {s}: {} vs {e}", stats.per_subspace_error[s]);
        expected += e;
    }
    assert!((stats.mean_error - expected).abs() <= 1e-6 * expected);
}

#[test]
fn distinct_points_fit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = gaussian(&mut rng, 8, 6);
    for m in [1, 2, 3, 6] {
        let cb = train_codebook(&data, m, 8, KMeansParams { iters: 20, seed: 3 }).unwrap();
        assert_eq!(cb.quantization_error(&data).unwrap().mean_error, 0.0);
    }
}

#[test]
fn paper_scale_code_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = gaussian(&mut rng, 512, 16);
    let cb = train_codebook(&data, 4, 256, KMeansParams { iters: 3, seed: 0 }).unwrap();
    assert_eq!(cb.code_bits(), 32.0);
    assert_eq!(cb.encode(&data[0]).unwrap().len(), 4);
}

#[test]
fn training_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = gaussian(&mut rng, 10, 6);
    assert!(matches!(train_codebook(&data, 4, 2, KMeansParams::default()), Err(Error::InvalidParameter(_))));
    assert!(matches!(train_codebook(&data, 2, 11, KMeansParams::default()), Err(Error::InsufficientData { .. })));
    assert!(train_codebook(&data, 2, 2, KMeansParams { iters: 0, seed: 0 }).is_err());
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = gaussian(&mut rng, 200, 8);
    let a = train_codebook(&data, 4, 16, KMeansParams { iters: 10, seed: 9 }).unwrap();
    let b = train_codebook(&data, 4, 16, KMeansParams { iters: 10, seed: 9 }).unwrap();
    assert_eq!(a.raw(), b.raw());
}

#[test]
fn extra_lloyd_iteration_never_hurts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let flat: Vec<f32> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut centers = kmeans_plus_plus(&flat, 3, 5, &mut rng);
    let mut assignment = vec![usize::MAX; 100];
    let (_, mut error) = assign_points(&flat, 3, &centers, &mut assignment);
    for _ in 0..30 {
        let (_, e) = lloyd_step(&flat, 3, &mut centers, &mut assignment, error);
        assert!(e <= error);
        error = e;
    }
}

#[test]
fn hand_computed_assignment_cost() {
    // Subspace 0 codewords {0, 10}; subspace 1 codewords {0, 4}; 1-d subspaces.
    let cb = Codebook::from_nested(&[vec![vec![0.0], vec![10.0]], vec![vec![0.0], vec![4.0]]]).unwrap();
    let data = vec![
        [1.0f32, 1.0],
        [2.0, 3.0],
        [9.0, 0.0],
        [12.0, 5.0],
        [-1.0, 2.0],
        [6.0, -1.0],
        [4.0, 1.0],
        [10.0, 4.0],
    ];
    // Nearest per coordinate and squared residuals:
    // x: 1->0 (1), 2->0 (4), 9->10 (1), 12->10 (4), -1->0 (1), 6->10 (16), 4->0 (16), 10->10 (0) = 43
    // y: 1->0 (1), 3->4 (1), 0->0 (0), 5->4 (1), 2: tie -> index 0 (4), -1->0 (1), 1->0 (1), 4->4 (0) = 9
    let stats = cb.quantization_error(&data).unwrap();
    assert_eq!(stats.per_subspace_error, vec![43.0 / 8.0, 9.0 / 8.0]);
    assert_eq!(stats.mean_error, 52.0 / 8.0);
    assert_eq!(cb.encode(&[-1.0, 2.0]).unwrap(), PqCode(vec![0, 0]));
}

#[test]
fn encode_decode_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cb = random_codebook(&mut rng, 3, 5, 2);
    let y = concat(&cb, &[3, 0, 4]);
    assert_eq!(cb.encode(&y).unwrap(), PqCode(vec![3, 0, 4]));
    assert_eq!(cb.decode(&PqCode(vec![0, 0, 0])).unwrap(), concat(&cb, &[0, 0, 0]));
    assert!(matches!(cb.decode(&PqCode(vec![0, 5, 0])), Err(Error::CodeOutOfRange { .. })));
    assert!(cb.encode(&[0.0; 5]).is_err());
    let stats = cb.quantization_error(&[y.clone(), y]).unwrap();
    assert_eq!(stats.mean_error, 0.0);
    assert!(cb.quantization_error::<Vec<f32>>(&[]).is_err());
}

#[test]
fn distance_table_direct_and_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cb = random_codebook(&mut rng, 2, 4, 3);
    let q: Vec<f32> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
    let table = cb.distance_table(&q).unwrap();
    for m in 0..2 {
        for k in 0..4 {
            let direct = sq_f64(&q[m * 3..(m + 1) * 3], cb.codeword(m, k));
            assert!((table.get(m, k) as f64 - direct).abs() <= 1e-5 * direct.max(1e-6));
        }
    }
    // Reverse the codeword order of subspace 1.
    let nested: Vec<Vec<Vec<f32>>> = (0..2)
        .map(|m| {
            let mut words: Vec<Vec<f32>> = (0..4).map(|k| cb.codeword(m, k).to_vec()).collect();
            if m == 1 {
                words.reverse();
            }
            words
        })
        .collect();
    let permuted = Codebook::from_nested(&nested).unwrap().distance_table(&q).unwrap();
    for k in 0..4 {
        assert_eq!(permuted.get(0, k), table.get(0, k));
        assert_eq!(permuted.get(1, k), table.get(1, 3 - k));
    }
    let code = PqCode(vec![2, 1]);
    let rec = cb.decode(&code).unwrap();
    assert_eq!(cb.distance_table(&rec).unwrap().adc_distance(&code), 0.0);
}

#[test]
fn farther_subcodeword_never_decreases_adc() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cb = random_codebook(&mut rng, 4, 16, 8);
    for _ in 0..50 {
        let q: Vec<f32> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
        let table = cb.distance_table(&q).unwrap();
        let code: Vec<u16> = (0..4).map(|_| rng.random_range(0..16)).collect();
        let m = rng.random_range(0..4);
        let alt = rng.random_range(0..16u16);
        if table.get(m, alt as usize) >= table.get(m, code[m] as usize) {
            let mut farther = code.clone();
            farther[m] = alt;
            assert!(table.adc_distance_raw(&farther) >= table.adc_distance_raw(&code));
        }
    }
}

fn brute_force_top(cb: &Codebook, y: &[f32], t: usize) -> Vec<(Vec<u16>, f64)> {
    let mut all: Vec<(Vec<u16>, f64)> = all_codes(cb.num_subspaces(), cb.num_codewords())
        .into_iter()
        .map(|c| {
            let d = sq_f64(y, &concat(cb, &c));
            (c, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(t);
    all
}

#[test]
fn enumeration_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let cb = random_codebook(&mut rng, 2, 8, 3);
        let y: Vec<f32> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        let got = enumerate_neighbor_codewords(&cb, &y, 10).unwrap();
        let want = brute_force_top(&cb, &y, 10);
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.code.0, w.0);
            assert!((g.sq_distance - w.1).abs() <= 1e-5 * w.1.max(1e-6));
        }
        let first = enumerate_neighbor_codewords(&cb, &y, 1).unwrap();
        assert_eq!(first[0].code, cb.encode(&y).unwrap());
    }
}

#[test]
fn enumeration_tie_order_on_integer_grid() {
    // Many exact ties: codewords on a small integer grid, query on the grid too.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..30 {
        let nested: Vec<Vec<Vec<f32>>> = (0..3)
            .map(|_| (0..4).map(|_| (0..2).map(|_| rng.random_range(-2..=2) as f32).collect()).collect())
            .collect();
        let cb = Codebook::from_nested(&nested).unwrap();
        let y: Vec<f32> = (0..6).map(|_| rng.random_range(-2..=2) as f32).collect();
        for t in [1, 7, 30, 64] {
            let got: Vec<(Vec<u16>, f64)> = enumerate_neighbor_codewords(&cb, &y, t)
                .unwrap()
                .into_iter()
                .map(|n| (n.code.0, n.sq_distance))
                .collect();
            assert_eq!(got, brute_force_top(&cb, &y, t));
        }
    }
}

#[test]
fn enumeration_count_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cb = random_codebook(&mut rng, 2, 4, 1);
    assert!(enumerate_neighbor_codewords(&cb, &[0.0, 0.0], 0).is_err());
    assert!(enumerate_neighbor_codewords(&cb, &[0.0, 0.0], 17).is_err());
    assert_eq!(enumerate_neighbor_codewords(&cb, &[0.0, 0.0], 16).unwrap().len(), 16);
}

#[test]
fn paper_operating_point_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cb = random_codebook(&mut rng, 4, 16, 4);
    let y: Vec<f32> = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
    let got = enumerate_neighbor_codewords(&cb, &y, 150).unwrap();
    assert_eq!(got.len(), 150);
    assert!(got.windows(2).all(|w| w[0].sq_distance <= w[1].sq_distance));
    let mut codes: Vec<&PqCode> = got.iter().map(|n| &n.code).collect();
    codes.sort_by(|a, b| a.0.cmp(&b.0));
    codes.dedup();
    assert_eq!(codes.len(), 150);
}

#[test]
fn codebook_file_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cb = random_codebook(&mut rng, 4, 16, 2);
    let mut buf = Vec::new();
    write_codebook(&cb, &mut buf).unwrap();
    assert_eq!(&buf[..4], b"SQCB");
    let back = read_codebook(buf.as_slice()).unwrap();
    assert_eq!(back.raw(), cb.raw());
    assert_eq!((back.num_subspaces(), back.num_codewords(), back.sub_dim()), (4, 16, 2));
    assert!(read_codebook(&buf[..buf.len() - 1]).is_err());
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_codebook(bad.as_slice()).is_err());

    let dump = CodebookDump::from(&cb);
    let json = serde_json::to_string(&dump).unwrap();
    let parsed: CodebookDump = serde_json::from_str(&json).unwrap();
    assert_eq!(Codebook::try_from(parsed).unwrap().raw(), cb.raw());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_is_optimal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=2);
        let k = rng.random_range(1..=8);
        let cb = random_codebook(&mut rng, m, k, 2);
        let y: Vec<f32> = (0..2 * m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let best = sq_f64(&y, &cb.reconstruct(&y).unwrap());
        for code in all_codes(m, k) {
            prop_assert!(best <= sq_f64(&y, &concat(&cb, &code)) + 1e-9);
        }
        let code = cb.encode(&y).unwrap();
        for (s, &i) in code.0.iter().enumerate() {
            let want = (0..k)
                .min_by(|&a, &b| sq_f64(&y[2 * s..2 * s + 2], cb.codeword(s, a)).total_cmp(&sq_f64(&y[2 * s..2 * s + 2], cb.codeword(s, b))))
                .unwrap();
            prop_assert_eq!(i as usize, want);
        }
    }

    #[test]
    fn adc_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random_codebook(&mut rng, 4, 16, 8);
        let q: Vec<f32> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
        let code = PqCode((0..4).map(|_| rng.random_range(0..16)).collect());
        let adc = cb.distance_table(&q).unwrap().adc_distance(&code) as f64;
        let direct = sq_f64(&q, &cb.decode(&code).unwrap());
        prop_assert!((adc - direct).abs() <= 1e-4 * direct);
    }

    #[test]
    fn kmeans_history_is_monotone(seed in any::<u64>(), k in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = gaussian(&mut rng, 60, 6);
        let (cb, history) = train_codebook_with_history(&data, 3, k, KMeansParams { iters: 15, seed }).unwrap();
        for per in &history.per_subspace {
            prop_assert!(per.windows(2).all(|w| w[1] <= w[0]));
        }
        let totals = history.totals();
        prop_assert!(totals.windows(2).all(|w| w[1] <= w[0]));
        let final_error = cb.quantization_error(&data).unwrap().mean_error;
        prop_assert!((final_error - totals[totals.len() - 1]).abs() <= 1e-9 * final_error.max(1.0));
    }

    #[test]
    fn enumeration_matches_brute_force_prop(seed in any::<u64>(), t in 1usize..=64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random_codebook(&mut rng, 2, 8, 2);
        let y: Vec<f32> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let got: Vec<Vec<u16>> = enumerate_neighbor_codewords(&cb, &y, t).unwrap().into_iter().map(|n| n.code.0).collect();
        let want: Vec<Vec<u16>> = brute_force_top(&cb, &y, t).into_iter().map(|(c, _)| c).collect();
        prop_assert_eq!(got, want);
    }
}
