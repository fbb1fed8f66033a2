//! One function per subcommand. Each returns the report it produced.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use tubetopo::edm::{self, Prediction};
use tubetopo::heads::{self, ChannelMap, LossParts};
use tubetopo::metrics;
use tubetopo::rng::{substream, DAR_STREAM};
use tubetopo::skeleton::{binarize, detect_endpoints, soft_skeleton, SkeletonMask};
use tubetopo::synth::generate_with_cuts;
use tubetopo::volio::{
    channelmap_to_value, parse_channelmap, read_channelmap, read_volume, write_report, write_sidecar, write_volume,
    PredictionData, ReadOptions, Report, Volume,
};
use tubetopo::{BinaryMask, LabelVolume, ProbVolume, ValueKind};

use crate::config::{echo, Settings};
use crate::{selftest, CliError, Command, Outcome};

type CmdResult = Result<Outcome, CliError>;

fn kind(settings: &Settings) -> ValueKind {
    if settings.input.logits {
        ValueKind::Logits
    } else {
        ValueKind::Probabilities
    }
}

fn read(path: &Path, channels: bool) -> Result<Volume, CliError> {
    Ok(read_volume(path, ReadOptions { channels_last: channels })?)
}

/// Integer data as a nonzero mask; float data binarized as scores.
fn load_binary(path: &Path, settings: &Settings) -> Result<BinaryMask, CliError> {
    Ok(match read(path, true)?.to_prediction(kind(settings))? {
        PredictionData::Labels(l) => l.foreground(),
        PredictionData::Scores(p) => binarize(&p, &settings.thinning),
    })
}

fn load_labels(path: &Path) -> Result<LabelVolume, CliError> {
    Ok(read(path, false)?.to_labels()?)
}

/// Head outputs are always logits.
fn load_logits(path: &Path) -> Result<ProbVolume, CliError> {
    Ok(read(path, true)?.to_prob(ValueKind::Logits)?)
}

fn outcome(command: &str, config: Value, result: &impl Serialize, summary: String) -> CmdResult {
    Ok(Outcome { report: Report::new(command, &config, result)?, summary, failed: false })
}

fn save_report(report: &Report, path: Option<&PathBuf>) -> Result<(), CliError> {
    if let Some(p) = path {
        write_report(report, p)?;
    }
    Ok(())
}

pub(crate) fn dispatch(cmd: &Command, mut settings: Settings) -> CmdResult {
    settings.thinning.validate()?;
    match cmd {
        Command::Skeletonize { input, output, report, .. } => {
            let mask = load_binary(input, &settings)?;
            let skel = soft_skeleton(&mask, &settings.thinning);
            write_volume(&Volume::from_mask(&skel.mask), output)?;
            let result = json!({
                "shape": mask.shape(),
                "foreground_voxels": mask.count(),
                "skeleton_voxels": skel.mask.count(),
            });
            let summary = format!("skeleton: {} of {} foreground voxels", skel.mask.count(), mask.count());
            let out = outcome("skeletonize", echo(&settings, &["input", "thinning"], None), &result, summary)?;
            save_report(&out.report, report.as_ref())?;
            Ok(out)
        }
        Command::Endpoints { input, output, .. } => {
            let mask = load_binary(input, &settings)?;
            let skel = if settings.input.is_skeleton {
                SkeletonMask::from_mask(mask)
            } else {
                soft_skeleton(&mask, &settings.thinning)
            };
            let ends = detect_endpoints(&skel);
            let points: Vec<[usize; 3]> = ends.points.iter().map(|v| [v.z, v.y, v.x]).collect();
            let result = json!({"shape": skel.mask.shape(), "count": points.len(), "endpoints": points});
            let summary = format!("{} endpoints", points.len());
            let out = outcome("endpoints", echo(&settings, &["input", "thinning"], None), &result, summary)?;
            save_report(&out.report, output.as_ref())?;
            Ok(out)
        }
        Command::Mine { gt, pred, output, report, .. } => {
            let gt = read(gt, false)?.to_mask()?;
            let cfg = settings.edm.resolve(gt.shape(), settings.seed);
            let pred = read(pred, true)?.to_prediction(kind(&settings))?;
            let mined = match &pred {
                PredictionData::Labels(l) => edm::mine(&gt, &l.foreground(), &cfg, &settings.thinning)?,
                PredictionData::Scores(p) => edm::mine(&gt, Prediction::Scores(p), &cfg, &settings.thinning)?,
            };
            write_volume(&Volume::from_mask(&mined.mask.mask), output)?;
            let summary = mined.summary();
            let text = format!(
                "{} candidates in {} clusters, {} mask voxels",
                summary.candidates.merged.len(),
                summary.n_clusters,
                summary.mask_voxels
            );
            let out = outcome("mine", echo(&settings, &["input", "thinning", "edm"], Some(&cfg)), &summary, text)?;
            save_report(&out.report, report.as_ref())?;
            Ok(out)
        }
        Command::Metrics { pred, gt, output, .. } => {
            let gt = load_labels(gt)?;
            let spec = settings.eval_spec();
            let report = match read(pred, true)?.to_prediction(kind(&settings))? {
                PredictionData::Labels(l) => metrics::evaluate(&l, &gt, &spec)?,
                PredictionData::Scores(p) => metrics::evaluate(&p, &gt, &spec)?,
            };
            let hd = report.hausdorff_mm.map_or("undefined".to_string(), |h| format!("{h:.4}"));
            let summary = format!(
                "dice {:.4}  cldice {:.4}  betti error {}  hd {hd} mm",
                report.dice, report.cldice, report.betti_error
            );
            let out = outcome("metrics", echo(&settings, &["input", "thinning", "metrics"], None), &report, summary)?;
            save_report(&out.report, output.as_ref())?;
            Ok(out)
        }
        Command::DarApply { seg, ske, dis, hr, hc, output, report } => {
            let seg = load_logits(seg)?;
            let ske = load_logits(ske)?;
            let dis = load_logits(dis)?;
            if let Some(p) = hr {
                settings.dar.hr = Some(channelmap_to_value(&read_channelmap(p)?));
            }
            if let Some(p) = hc {
                settings.dar.hc = Some(channelmap_to_value(&read_channelmap(p)?));
            }
            let (hr, hc) = dar_maps(&mut settings, seg.channels())?;
            let refined = heads::dar_apply(&seg, &ske, &dis, &hr, &hc)?;
            write_volume(&Volume::from_prob(&refined), output)?;
            let result = json!({
                "shape": refined.shape(),
                "in_channels": hr.in_channels(),
                "hidden_channels": hr.out_channels(),
                "out_channels": hc.out_channels(),
            });
            let summary = format!("refined logits with {} channels", refined.channels());
            let out = outcome("dar-apply", echo(&settings, &["dar"], None), &result, summary)?;
            save_report(&out.report, report.as_ref())?;
            Ok(out)
        }
        Command::LossEval { parts, gt, seg, ske, dis, refined, dis_gt, ske_gt, output, .. } => {
            settings.loss.validate()?;
            let (parts, details, edm_cfg) = match (parts, gt) {
                (Some(p), _) => (read_parts(p)?, Value::Null, None),
                (None, Some(gt)) => {
                    let maps = LossMaps {
                        gt,
                        seg: seg.as_deref().expect("clap requires seg"),
                        ske: ske.as_deref().expect("clap requires ske"),
                        dis: dis.as_deref().expect("clap requires dis"),
                        refined: refined.as_deref().expect("clap requires refined"),
                        dis_gt: dis_gt.as_deref(),
                        ske_gt: ske_gt.as_deref(),
                    };
                    loss_from_maps(&maps, &settings)?
                }
                (None, None) => {
                    return Err(CliError::Usage("loss-eval needs --parts or --gt with head outputs".into()))
                }
            };
            let breakdown = heads::total_loss(&parts, &settings.loss)?;
            let result = json!({"breakdown": breakdown, "details": details});
            let summary = format!(
                "l_total {}  (l_ims {}, l_con {}, l_dar {})",
                breakdown.l_total, breakdown.l_ims, breakdown.l_con, breakdown.l_dar
            );
            let sections: &[&str] = if edm_cfg.is_some() { &["thinning", "edm", "loss"] } else { &["loss"] };
            let out = outcome("loss-eval", echo(&settings, sections, edm_cfg.as_ref()), &result, summary)?;
            save_report(&out.report, output.as_ref())?;
            Ok(out)
        }
        Command::Synth { output, format, .. } => {
            let ext = match format.as_str() {
                "nii" | "nii.gz" | "pgm" => format.as_str(),
                other => return Err(CliError::Usage(format!("unknown --format {other:?}"))),
            };
            settings.synth.network.seed = settings.seed;
            let fix = generate_with_cuts(&settings.synth.network, &settings.synth.cuts)?;
            std::fs::create_dir_all(output).map_err(tubetopo::Error::from)?;
            let gt_name = format!("gt.{ext}");
            let frag_name = format!("frag.{ext}");
            write_volume(&Volume::from_mask(&fix.gt_mask), output.join(&gt_name))?;
            write_volume(&Volume::from_mask(&fix.frag_mask), output.join(&frag_name))?;
            write_sidecar(&fix.sidecar(), output.join("fixture.json"))?;
            let result = json!({
                "gt": gt_name,
                "frag": frag_name,
                "sidecar": "fixture.json",
                "gt_betti": fix.gt_betti,
                "frag_components": fix.frag_components,
                "true_endpoints": fix.true_endpoints.len(),
                "cut_midpoints": fix.cut_midpoints,
            });
            let summary = format!(
                "{} branches, {} cuts, {} fragments written to {}",
                fix.branches.len(),
                fix.cut_midpoints.len(),
                fix.frag_components,
                output.display()
            );
            let out = outcome("synth", echo(&settings, &["synth"], None), &result, summary)?;
            write_report(&out.report, output.join("report.json"))?;
            Ok(out)
        }
        Command::Selftest => {
            let checks = selftest::run_checks();
            let failed = checks.iter().any(|c| !c.passed);
            let summary = checks
                .iter()
                .map(|c| format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
                .collect::<Vec<_>>()
                .join("\n");
            let mut out = outcome("selftest", echo(&settings, &[], None), &checks, summary)?;
            out.failed = failed;
            Ok(out)
        }
    }
}

/// Maps from the settings, or seeded random ones. The chosen maps are
/// written back so the echoed config pins them.
fn dar_maps(settings: &mut Settings, seg_channels: usize) -> Result<(ChannelMap, ChannelMap), CliError> {
    let hidden = if settings.dar.hidden == 0 { 2 * seg_channels } else { settings.dar.hidden };
    let out = if settings.dar.out_channels == 0 { seg_channels } else { settings.dar.out_channels };
    let mut rng = substream(settings.seed, DAR_STREAM);
    let mut random = |inp: usize, out: usize| -> Result<ChannelMap, CliError> {
        let scale = 1.0 / (inp as f64).sqrt();
        let weight = (0..inp * out).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let bias = (0..out).map(|_| rng.gen_range(-0.1..0.1)).collect();
        Ok(ChannelMap::new(inp, out, weight, bias)?)
    };
    let hr = match &settings.dar.hr {
        Some(v) => parse_channelmap(v)?,
        None => random(seg_channels, hidden)?,
    };
    let hc = match &settings.dar.hc {
        Some(v) => parse_channelmap(v)?,
        None => random(hr.out_channels(), out)?,
    };
    settings.dar.hr = Some(channelmap_to_value(&hr));
    settings.dar.hc = Some(channelmap_to_value(&hc));
    settings.dar.hidden = hr.out_channels();
    settings.dar.out_channels = hc.out_channels();
    Ok((hr, hc))
}

fn read_parts(path: &Path) -> Result<LossParts, CliError> {
    let text = std::fs::read_to_string(path).map_err(tubetopo::Error::from)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parts: LossParts = if is_json {
        serde_json::from_str(&text).map_err(tubetopo::Error::from)?
    } else {
        toml::from_str(&text)
            .map_err(|e| tubetopo::Error::SchemaViolation { path: "$".into(), message: e.to_string() })?
    };
    Ok(parts)
}

struct LossMaps<'a> {
    gt: &'a Path,
    seg: &'a Path,
    ske: &'a Path,
    dis: &'a Path,
    refined: &'a Path,
    dis_gt: Option<&'a Path>,
    ske_gt: Option<&'a Path>,
}

/// Component losses from head outputs. Missing targets are derived from the
/// ground truth: the skeleton target is its soft skeleton, the discontinuity
/// target is mined against the segmentation head.
fn loss_from_maps(
    maps: &LossMaps<'_>,
    settings: &Settings,
) -> Result<(LossParts, Value, Option<tubetopo::edm::EdmConfig>), CliError> {
    let gt = load_labels(maps.gt)?;
    let seg = load_logits(maps.seg)?;
    let ske = load_logits(maps.ske)?;
    let dis = load_logits(maps.dis)?;
    let refined = load_logits(maps.refined)?;
    let fg = gt.foreground();

    let ske_target = match maps.ske_gt {
        Some(p) => load_labels(p)?,
        None => LabelVolume::from_mask(&soft_skeleton(&fg, &settings.thinning).mask),
    };
    let (dis_target, edm_cfg) = match maps.dis_gt {
        Some(p) => (load_labels(p)?, None),
        None => {
            let cfg = settings.edm.resolve(fg.shape(), settings.seed);
            let mined = edm::mine(&fg, Prediction::Scores(&seg), &cfg, &settings.thinning)?;
            (LabelVolume::from_mask(&mined.mask.mask), Some(cfg))
        }
    };
    let seg_skeleton = soft_skeleton(&binarize(&seg, &settings.thinning), &settings.thinning);
    let consistency = heads::consistency_loss(&seg, &seg_skeleton.mask, &ske)?;
    let parts = LossParts {
        l_seg: heads::seg_loss(&seg, &gt)?,
        l_dis: heads::seg_loss(&dis, &dis_target)?,
        l_ske: heads::seg_loss(&ske, &ske_target)?,
        l_con: consistency.value,
        l_dar: heads::ce_loss(&refined, &gt)?,
    };
    let details = json!({
        "consistency": consistency,
        "dis_target_voxels": dis_target.foreground().count(),
        "ske_target_voxels": ske_target.foreground().count(),
    });
    Ok((parts, details, edm_cfg))
}
