//! Small oracle suite behind `tubetopo selftest`.

use std::collections::HashSet;

use rand::Rng;
use serde::Serialize;

use tubetopo::edm::{self, select_discontinuity_points, DistanceSet, EdmConfig};
use tubetopo::heads::{self, kl_divergence, ChannelMap, LossParts, LossWeights, Support};
use tubetopo::metrics::{betti, cldice, dice, hausdorff};
use tubetopo::rng::substream;
use tubetopo::skeleton::{soft_skeleton, ThinningParams};
use tubetopo::synth::{generate, TubeNetworkSpec};
use tubetopo::{BinaryMask, ProbVolume, Shape, Spacing, ValueKind};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), passed, detail: detail.into() }
}

fn betti_case(name: &str, mask: &BinaryMask, expected: (usize, usize, usize)) -> Check {
    let b = betti(mask);
    let got = (b.b0, b.b1, b.b2);
    check(name, got == expected, format!("got {got:?}, expected {expected:?}"))
}

fn shapes() -> Vec<Check> {
    let n = 24;
    let c = (n as f64 - 1.0) / 2.0;
    let shape = Shape::new_3d(n, n, n);
    let cube = BinaryMask::from_fn(shape, Spacing::UNIT, |v| {
        (4..20).contains(&v.z) && (4..20).contains(&v.y) && (4..20).contains(&v.x)
    });
    let torus = BinaryMask::from_fn(shape, Spacing::UNIT, |v| {
        let (z, y, x) = (v.z as f64 - c, v.y as f64 - c, v.x as f64 - c);
        let ring = (y * y + x * x).sqrt() - 7.0;
        ring * ring + z * z <= 2.5 * 2.5
    });
    let shell = BinaryMask::from_fn(shape, Spacing::UNIT, |v| {
        let r = ((v.z as f64 - c).powi(2) + (v.y as f64 - c).powi(2) + (v.x as f64 - c).powi(2)).sqrt();
        (7.0..=9.5).contains(&r)
    });
    let flat = Shape::new_2d(n, n);
    let annulus = BinaryMask::from_fn(flat, Spacing::UNIT, |v| {
        let r = ((v.y as f64 - c).powi(2) + (v.x as f64 - c).powi(2)).sqrt();
        (5.0..=9.0).contains(&r)
    });
    vec![
        betti_case("betti cube", &cube, (1, 0, 0)),
        betti_case("betti torus", &torus, (1, 1, 0)),
        betti_case("betti shell", &shell, (1, 0, 1)),
        betti_case("betti annulus", &annulus, (1, 1, 0)),
    ]
}

fn set_oracles() -> Vec<Check> {
    let mut rng = substream(1, "selftest");
    let mut worst_dice = 0.0f64;
    let mut worst_cldice = 0.0f64;
    let mut hd_ok = true;
    let params = ThinningParams::default();
    for _ in 0..20 {
        let shape = Shape::new_3d(rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
        let density = rng.gen_range(0.2..0.8);
        let mut random = || BinaryMask::from_fn(shape, Spacing::UNIT, |_| rng.gen_bool(density));
        let (p, g) = (random(), random());
        let ps: HashSet<_> = p.voxels().collect();
        let gs: HashSet<_> = g.voxels().collect();
        let expected = if ps.len() + gs.len() == 0 {
            1.0
        } else {
            2.0 * ps.intersection(&gs).count() as f64 / (ps.len() + gs.len()) as f64
        };
        worst_dice = worst_dice.max((dice(&p, &g).unwrap() - expected).abs());

        let sp: HashSet<_> = soft_skeleton(&p, &params).mask.voxels().collect();
        let sg: HashSet<_> = soft_skeleton(&g, &params).mask.voxels().collect();
        let expected_cl = if sp.is_empty() && sg.is_empty() {
            1.0
        } else if sp.is_empty() || sg.is_empty() {
            0.0
        } else {
            let tprec = sp.intersection(&gs).count() as f64 / sp.len() as f64;
            let tsens = sg.intersection(&ps).count() as f64 / sg.len() as f64;
            if tprec + tsens == 0.0 {
                0.0
            } else {
                2.0 * tprec * tsens / (tprec + tsens)
            }
        };
        worst_cldice = worst_cldice.max((cldice(&p, &g, &params).unwrap() - expected_cl).abs());

        if !ps.is_empty() && !gs.is_empty() {
            let directed = |a: &HashSet<tubetopo::Voxel>, b: &HashSet<tubetopo::Voxel>| {
                a.iter().map(|x| b.iter().map(|y| x.distance(y)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
            };
            let brute = directed(&ps, &gs).max(directed(&gs, &ps));
            hd_ok &= hausdorff(&p, &g).unwrap() == brute;
        }
    }
    vec![
        check("dice set-count oracle", worst_dice <= 1e-9, format!("max error {worst_dice:e}")),
        check("cldice set-count oracle", worst_cldice <= 1e-9, format!("max error {worst_cldice:e}")),
        check("hausdorff brute force", hd_ok, "exact match on 20 random pairs"),
    ]
}

fn heads_checks() -> Vec<Check> {
    let one = |v: [f64; 2]| {
        ProbVolume::from_voxel_values(Shape::new_2d(1, 1), Spacing::UNIT, ValueKind::Probabilities, &[v.to_vec()])
            .unwrap()
    };
    let p = one([0.5, 0.5]);
    let q = one([0.25, 0.75]);
    let self_kl = kl_divergence(&p, &p, Support::All).unwrap();
    let kl = kl_divergence(&p, &q, Support::All).unwrap();

    let parts = LossParts { l_seg: 0.4, l_dis: 0.3, l_ske: 0.3, l_con: 0.2, l_dar: 0.4 };
    let total = heads::total_loss(&parts, &LossWeights::default()).unwrap().l_total;

    let shape = Shape::new_3d(2, 3, 3);
    let mut rng = substream(2, "selftest");
    let seg = ProbVolume::new(
        shape,
        Spacing::UNIT,
        2,
        ValueKind::Logits,
        (0..36).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    )
    .unwrap();
    let zeros = ProbVolume::new(shape, Spacing::UNIT, 2, ValueKind::Logits, vec![0.0; 36]).unwrap();
    let id = ChannelMap::identity(2);
    let doubled = heads::dar_apply(&seg, &zeros, &zeros, &id, &id).unwrap();
    let worst_double = doubled.data().iter().zip(seg.data()).map(|(o, f)| (o - 2.0 * f).abs()).fold(0.0f64, f64::max);

    let mut worst_forms = 0.0f64;
    for _ in 0..50 {
        let mut logits = |c: usize| {
            ProbVolume::new(
                shape,
                Spacing::UNIT,
                c,
                ValueKind::Logits,
                (0..c * 18).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            )
            .unwrap()
        };
        let (seg, ske, dis) = (logits(2), logits(2), logits(2));
        let mut map = |i: usize, o: usize| {
            ChannelMap::new(
                i,
                o,
                (0..i * o).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let (hr, hc) = (map(2, 4), map(4, 2));
        let a = heads::dar_apply(&seg, &ske, &dis, &hr, &hc).unwrap();
        let b = heads::dar_apply_expanded(&seg, &ske, &dis, &hr, &hc).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            worst_forms = worst_forms.max((x - y).abs() / x.abs().max(1e-12));
        }
    }

    vec![
        check("kl of identical distributions", self_kl.abs() <= 1e-9, format!("{self_kl:e}")),
        check("kl scalar example", (kl - 0.143841).abs() <= 1e-5, format!("{kl}")),
        check("total loss example", total == 1.3, format!("{total}")),
        check("refinement doubling", worst_double <= 1e-6, format!("max error {worst_double:e}")),
        check("refinement forms agree", worst_forms <= 1e-6, format!("max relative error {worst_forms:e}")),
    ]
}

fn edm_checks() -> Vec<Check> {
    let mut rng = substream(3, "selftest");
    let mut invariant = true;
    for _ in 0..100 {
        let n = rng.gen_range(1..30);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..50.0)).collect();
        let base = select_discontinuity_points(&DistanceSet::from_distances(&d)).points;
        for c in [0.1, 3.0, 100.0] {
            let scaled: Vec<f64> = d.iter().map(|x| x * c).collect();
            invariant &= select_discontinuity_points(&DistanceSet::from_distances(&scaled)).points == base;
        }
    }

    let spec = TubeNetworkSpec { shape: Shape::new_3d(48, 48, 48), n_branches: 6, ..TubeNetworkSpec::default() };
    let soundness = match generate(&spec) {
        Ok(fix) => {
            let cfg = EdmConfig::with_window([12, 12, 12]);
            match edm::mine(&fix.gt_mask, &fix.gt_mask, &cfg, &ThinningParams::default()) {
                Ok(out) => check(
                    "mining a perfect prediction",
                    out.mask.mask.is_empty(),
                    format!("{} mask voxels", out.mask.mask.count()),
                ),
                Err(e) => check("mining a perfect prediction", false, e.to_string()),
            }
        }
        Err(e) => check("mining a perfect prediction", false, e.to_string()),
    };
    vec![check("threshold scale invariance", invariant, "100 random distance sets, c in {0.1, 3, 100}"), soundness]
}

/// Runs every check; none of them panics on failure.
pub fn run_checks() -> Vec<Check> {
    let mut out = shapes();
    out.extend(set_oracles());
    out.extend(heads_checks());
    out.extend(edm_checks());
    out
}
