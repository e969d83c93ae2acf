mod common;

use bam_core::geometry::AtomicStructure;
use bam_core::io::*;
use bam_core::model::{HeadMode, ModelConfig, ModelParams, RaceModel};
use bam_core::posterior::{IvonHyper, IvonState, LaplaceState, PosteriorApprox, SwagState};
use common::*;
use proptest::prelude::*;
use rand::Rng;
use std::path::{Path, PathBuf};

fn corpus() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "xyz"))
        .collect();
    v.sort();
    assert!(v.len() >= 4);
    v
}

fn parse(text: &str) -> Result<Vec<AtomicStructure>, ParseError> {
    parse_extxyz(text, &ExtxyzOptions::default())
}

fn roundtrip(frames: &[AtomicStructure], opts: &ExtxyzOptions) -> Vec<AtomicStructure> {
    let mut buf = Vec::new();
    write_extxyz(&mut buf, frames, opts).unwrap();
    parse_extxyz(std::str::from_utf8(&buf).unwrap(), opts).unwrap()
}

#[test]
fn minimal_frame() {
    let s = parse("1\nsingle atom\nH 0.0 0.0 0.0\n").unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].species, vec![1]);
    assert!(s[0].cell.is_none() && s[0].pbc == [false; 3]);
    assert!(s[0].energy.is_none() && s[0].forces.is_none());
}

#[test]
fn lattice_and_forces_frame() {
    let text = "2\nLattice=\"3 0 0 0 3 0 0 0 3\" Properties=species:S:1:pos:R:3:forces:R:3 energy=-1.5\n\
                Cu 0 0 0 0.1 0.2 0.3\nCu 1.5 1.5 1.5 -0.1 -0.2 -0.3\n";
    let s = &parse(text).unwrap()[0];
    assert_eq!(s.species, vec![29, 29]);
    assert_eq!(s.pbc, [true; 3]);
    assert_eq!(s.cell.unwrap()[1], [0.0, 3.0, 0.0]);
    assert_eq!(s.energy, Some(-1.5));
    assert_eq!(s.forces.as_ref().unwrap()[1], [-0.1, -0.2, -0.3]);
}

fn random_frame(g: &mut impl Rng, n: usize, periodic: bool) -> AtomicStructure {
    let pos: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| g.random_range(-5.0..5.0))).collect();
    let species = (0..n).map(|_| g.random_range(1..=90)).collect();
    let forces = (0..n)
        .map(|_| std::array::from_fn(|_| g.random::<f64>() * 10f64.powi(g.random_range(-12..3))))
        .collect();
    let e = -g.random::<f64>() * 1e3;
    let s = if periodic {
        let cell = std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 10.0 + g.random::<f64>() } else { g.random::<f64>() }));
        AtomicStructure::periodic(pos, species, cell).unwrap()
    } else {
        AtomicStructure::molecule(pos, species).unwrap()
    };
    s.with_labels(Some(e), Some(forces))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn write_read_is_bit_exact(seed in any::<u64>(), n in 1usize..6, periodic in any::<bool>()) {
        let mut g = rng(seed);
        let frames = vec![random_frame(&mut g, n, periodic), random_frame(&mut g, n + 1, !periodic)];
        let back = roundtrip(&frames, &ExtxyzOptions::default());
        prop_assert_eq!(back.len(), 2);
        for (a, b) in frames.iter().zip(&back) {
            let bits = |v: &[[f64; 3]]| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.positions), bits(&b.positions));
            prop_assert_eq!(bits(a.forces.as_ref().unwrap()), bits(b.forces.as_ref().unwrap()));
            prop_assert_eq!(a.energy.unwrap().to_bits(), b.energy.unwrap().to_bits());
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn seventeen_significant_digits_on_write() {
    let s = AtomicStructure::molecule(vec![[0.1, 1.0 / 3.0, -2.5e-7]], vec![8])
        .unwrap()
        .with_labels(Some(0.1), None);
    let mut buf = Vec::new();
    write_extxyz(&mut buf, &[s], &ExtxyzOptions::default()).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let row = text.lines().nth(2).unwrap();
    assert_eq!(row, "O 1.0000000000000001e-1 3.3333333333333331e-1 -2.4999999999999999e-7");
    assert!(text.lines().nth(1).unwrap().contains("energy=1.0000000000000001e-1"));
}

#[test]
fn corpus_files_are_read_write_read_fixpoints() {
    for path in corpus() {
        let ds = read_extxyz(&path, &ExtxyzOptions::default(), true).unwrap();
        let once = roundtrip(&ds.structures, &ExtxyzOptions::default());
        assert_eq!(once, ds.structures, "{}", path.display());
        let twice = roundtrip(&once, &ExtxyzOptions::default());
        assert_eq!(twice, once);
    }
}

#[test]
fn corpus_details() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let slab = read_extxyz(&dir.join("slab_extra_columns.xyz"), &ExtxyzOptions::default(), false).unwrap();
    let s = &slab.structures[0];
    assert_eq!(s.species, vec![6, 6, 6, 1]);
    assert_eq!(s.pbc, [true, true, false]);
    assert_eq!(s.energy, Some(-3.25));
    assert_eq!(s.forces.as_ref().unwrap()[1], [-0.1, 0.0, 0.2]);
    let remap = ExtxyzOptions {
        energy_key: "free_energy".into(),
        ..Default::default()
    };
    let slab2 = read_extxyz(&dir.join("slab_extra_columns.xyz"), &remap, false).unwrap();
    assert_eq!(slab2.structures[0].energy, Some(-3.5));

    let si = read_extxyz(&dir.join("silicon_cell.xyz"), &ExtxyzOptions::default(), false).unwrap();
    assert_eq!(si.len(), 2);
    // pbc inferred from the lattice when not given
    assert_eq!(si.structures[1].pbc, [true; 3]);
    assert!(si.is_labelled());

    let plain = read_extxyz(&dir.join("unlabelled_plain.xyz"), &ExtxyzOptions::default(), false).unwrap();
    assert_eq!(
        plain.labels(),
        LabelKinds {
            energy: false,
            forces: false
        }
    );
    assert!(!plain.partial_labels);
    let bytes = std::fs::read(dir.join("unlabelled_plain.xyz")).unwrap();
    assert_eq!(plain.provenance.unwrap().sha256, sha256_hex(&bytes));
}

#[test]
fn sha256_known_vector() {
    assert_eq!(
        sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn mismatched_atom_count_names_the_frame() {
    let good = "1\nenergy=1.0\nH 0 0 0\n";
    let short = "3\nenergy=2.0\nH 0 0 0\nH 1 0 0\n";
    let e = parse(&format!("{good}{short}")).unwrap_err();
    assert_eq!(e.frame, 1);
    assert_eq!(e.line, 8);
    let long = "1\nenergy=2.0\nH 0 0 0\nH 1 0 0\n";
    let e = parse(&format!("{good}{long}")).unwrap_err();
    assert_eq!((e.frame, e.line), (1, 7));
    assert!(e.to_string().contains("frame 1"));
}

#[test]
fn malformed_input_reports_lines() {
    let e = parse("x\n\nH 0 0 0\n").unwrap_err();
    assert_eq!(e.line, 1);
    let e = parse("1\n\nXx 0 0 0\n").unwrap_err();
    assert_eq!(e.line, 3);
    let e = parse("1\n\nH 0 zero 0\n").unwrap_err();
    assert_eq!(e.line, 3);
    let e = parse("1\nLattice=\"1 0 0 0 1 0\"\nH 0 0 0\n").unwrap_err();
    assert_eq!(e.line, 2);
    let e = parse("1\nProperties=species:S:1:pos:R:3:forces:R:3\nH 0 0 0\n").unwrap_err();
    assert_eq!(e.line, 3);
    let e = parse("1\nenergy=\"1 2\n").unwrap_err();
    assert_eq!(e.line, 2);
}

#[test]
fn partial_labels_need_the_flag() {
    let text = "1\nenergy=1.0\nH 0 0 0\n1\n\nH 0 0 0\n";
    let frames = parse(text).unwrap();
    let err = Dataset::new(frames.clone(), None, false).unwrap_err();
    assert!(matches!(err, DatasetError::InconsistentLabels { have: 1, total: 2, .. }));
    let ds = Dataset::new(frames, None, true).unwrap();
    assert!(ds.partial_labels);
    assert_eq!(Dataset::new(vec![], None, true).unwrap_err(), DatasetError::Empty);
}

#[test]
fn paper_split_sizes() {
    let items: Vec<AtomicStructure> = (0..2000)
        .map(|i| AtomicStructure::molecule(vec![[i as f64, 0.0, 0.0]], vec![1]).unwrap())
        .collect();
    let [tr, va, te] = split(&items, SplitSpec::Counts([950, 50, 1000]), 7).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (950, 50, 1000));
    let again = split(&items, SplitSpec::Counts([950, 50, 1000]), 7).unwrap();
    assert_eq!(again, [tr, va, te]);
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_deterministic(n in 0usize..300, a in 0usize..200, b in 0usize..100, c in 0usize..100, seed in any::<u64>()) {
        let spec = SplitSpec::Counts([a, b, c]);
        match split_indices(n, spec, seed) {
            Ok(parts) => {
                prop_assert!(a + b + c <= n);
                prop_assert_eq!([parts[0].len(), parts[1].len(), parts[2].len()], [a, b, c]);
                let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), a + b + c);
                prop_assert!(all.iter().all(|&i| i < n));
                prop_assert_eq!(split_indices(n, spec, seed).unwrap(), parts);
            }
            Err(e) => {
                prop_assert!(a + b + c > n);
                prop_assert_eq!(e, SplitError::Oversubscribed { requested: a + b + c, available: n });
            }
        }
    }
}

#[test]
fn fraction_splits() {
    let [tr, va, te] = split_indices(37, SplitSpec::Fractions([1.0, 0.0, 0.0]), 1).unwrap();
    assert_eq!(tr.len(), 37);
    assert!(va.is_empty() && te.is_empty());
    let mut sorted = tr.clone();
    sorted.sort();
    assert_eq!(sorted, (0..37).collect::<Vec<_>>());
    let p = split_indices(1000, SplitSpec::Fractions([0.95, 0.05, 0.0]), 1).unwrap();
    assert_eq!((p[0].len(), p[1].len()), (950, 50));
    assert!(split_indices(10, SplitSpec::Fractions([0.7, 0.5, 0.0]), 1).is_err());
    assert!(split_indices(10, SplitSpec::Fractions([-0.1, 0.5, 0.0]), 1).is_err());
    assert_ne!(
        split_indices(50, SplitSpec::Counts([50, 0, 0]), 1).unwrap(),
        split_indices(50, SplitSpec::Counts([50, 0, 0]), 2).unwrap()
    );
}

fn model_cfg() -> ModelConfig {
    ModelConfig::small(vec![1, 8], HeadMode::Mve8)
}

fn random_vec(g: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| g.random_range(-1.0..1.0) * 10f64.powi(g.random_range(-20..20))).collect()
}

fn all_kinds() -> Vec<PosteriorApprox> {
    let p = RaceModel::new(model_cfg()).unwrap().n_params();
    let mut g = rng(3);
    let mut swag = SwagState::new(p, 4);
    for _ in 0..6 {
        swag.collect(&random_vec(&mut g, p)).unwrap();
    }
    vec![
        PosteriorApprox::Point {
            params: ModelParams::new(random_vec(&mut g, p)),
        },
        PosteriorApprox::Ensemble {
            members: (0..3).map(|_| ModelParams::new(random_vec(&mut g, p))).collect(),
        },
        PosteriorApprox::Swag { state: swag },
        PosteriorApprox::Ivon {
            state: IvonState {
                m: random_vec(&mut g, p),
                h: random_vec(&mut g, p).iter().map(|x| x.abs()).collect(),
                g: random_vec(&mut g, p),
                hyper: IvonHyper::default(),
                t: 17,
            },
        },
        PosteriorApprox::Laplace {
            state: LaplaceState {
                theta_map: random_vec(&mut g, p),
                subset: vec![0, 5, 9],
                ggn_diag: vec![1.0, 2.5, 0.0],
                prior_precision: 0.3,
            },
        },
    ]
}

#[test]
fn checkpoints_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for post in all_kinds() {
        let ck = Checkpoint {
            model: model_cfg(),
            posterior: post,
        };
        let path = dir.path().join(format!("{}.bam", ck.posterior.kind()));
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), ck.to_bytes());
        let header = read_checkpoint_header(&path).unwrap();
        assert_eq!(header.posterior, ck.posterior.kind());
        assert_eq!(header.format_version, FORMAT_VERSION);
    }
}

#[test]
fn checkpoint_layout() {
    let ck = Checkpoint {
        model: model_cfg(),
        posterior: all_kinds().swap_remove(0),
    };
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], b"BAMR");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
    assert_eq!(header["posterior"], "point");
    assert_eq!(header["arrays"][0]["name"], "params");
    assert_eq!(header["arrays"][0]["dtype"], "f64");
    let p = RaceModel::new(model_cfg()).unwrap().n_params();
    assert_eq!(bytes.len(), 16 + hlen + 8 * p);
    let PosteriorApprox::Point { params } = &ck.posterior else { unreachable!() };
    let first = f64::from_le_bytes(bytes[16 + hlen..24 + hlen].try_into().unwrap());
    assert_eq!(first.to_bits(), params.values[0].to_bits());
}

#[test]
fn bumped_version_is_incompatible() {
    let ck = Checkpoint {
        model: model_cfg(),
        posterior: all_kinds().swap_remove(0),
    };
    let mut bytes = ck.to_bytes();
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert_eq!(
        Checkpoint::from_bytes(&bytes).unwrap_err(),
        CheckpointError::IncompatibleCheckpoint { found: 2, expected: 1 }
    );
    // a header that claims another version is refused too
    let bytes = ck.to_bytes();
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let text = std::str::from_utf8(&bytes[16..16 + hlen]).unwrap();
    let edited = text.replacen("\"format_version\":1", "\"format_version\":7", 1);
    assert_ne!(edited, text);
    let mut out = bytes[..8].to_vec();
    out.extend_from_slice(&(edited.len() as u64).to_le_bytes());
    out.extend_from_slice(edited.as_bytes());
    out.extend_from_slice(&bytes[16 + hlen..]);
    assert!(matches!(
        Checkpoint::from_bytes(&out).unwrap_err(),
        CheckpointError::IncompatibleCheckpoint { found: 7, .. }
    ));
}

#[test]
fn damaged_checkpoints_are_corrupt() {
    let ck = Checkpoint {
        model: model_cfg(),
        posterior: all_kinds().swap_remove(2),
    };
    let bytes = ck.to_bytes();
    let corrupt = |b: &[u8]| matches!(Checkpoint::from_bytes(b), Err(CheckpointError::CorruptCheckpoint(_)));
    assert!(corrupt(&bytes[..bytes.len() - 1]));
    assert!(corrupt(&bytes[..10]));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(corrupt(&bad));
    // header length far beyond the file
    let mut bad = bytes.clone();
    bad[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(corrupt(&bad));
    // an array index pointing past the payload
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
    header["arrays"][1]["shape"][0] = serde_json::json!(u64::MAX / 4);
    let text = serde_json::to_vec(&header).unwrap();
    let mut out = bytes[..8].to_vec();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[16 + hlen..]);
    assert!(corrupt(&out));
}

#[test]
fn swag_round_trip_preserves_deviation_order() {
    let post = all_kinds().swap_remove(2);
    let ck = Checkpoint {
        model: model_cfg(),
        posterior: post.clone(),
    };
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap().posterior;
    let a = post.draw(5, &mut rng(99)).unwrap();
    let b = back.draw(5, &mut rng(99)).unwrap();
    assert_eq!(a, b);
    // the draws depend on the order, so the check above is not vacuous
    let PosteriorApprox::Swag { mut state } = post else { unreachable!() };
    state.devs.make_contiguous().reverse();
    let c = PosteriorApprox::Swag { state }.draw(5, &mut rng(99)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn run_config_rejects_unknown_keys() {
    let model = serde_json::to_value(ModelConfig::small(vec![1], HeadMode::Base)).unwrap();
    let ok = serde_json::json!({ "model": model, "seed": 3, "train": { "epochs": 5 } });
    let c = RunConfig::from_json(&ok.to_string()).unwrap();
    assert_eq!((c.seed, c.train.epochs), (3, 5));
    let mut bad = ok.clone();
    bad["colour"] = serde_json::json!("blue");
    assert!(matches!(RunConfig::from_json(&bad.to_string()), Err(IoError::Config(_))));
    let mut bad = ok.clone();
    bad["train"]["epochz"] = serde_json::json!(1);
    assert!(RunConfig::from_json(&bad.to_string()).is_err());
    let mut bad = ok;
    bad["train"]["loss"] = serde_json::json!("nll_jef");
    assert!(RunConfig::from_json(&bad.to_string()).is_err());
}
