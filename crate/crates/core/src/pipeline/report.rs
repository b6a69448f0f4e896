//! Run-directory layout: writers for every artifact and readers used by the
//! `step`, `metrics` and `report` commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bank::EntityBank;
use crate::conditioning::CostReport;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::script::{parse_script, EntityId, StoryScript};
use crate::tensor::{read_mask, read_tensor, write_mask, write_tensor, Frame, PixelMask};

use super::config::RunConfig;
use super::run::{CandidateStatus, RunOutcome, ShotResult};

pub const SCRIPT_FILE: &str = "script.json";
pub const CONFIG_FILE: &str = "run_config.json";
pub const INITIAL_BANK_FILE: &str = "bank_initial.emvb";
pub const FINAL_BANK_FILE: &str = "bank_final.emvb";

const SHOTS_HEADER: [&str; 12] = [
    "shot_num",
    "entities",
    "memory_slots",
    "missing",
    "tokens_full",
    "tokens_kept",
    "target_tokens",
    "reduction",
    "attention_ops_full",
    "attention_ops_kept",
    "keyframes",
    "updated",
];
const COST_HEADER: [&str; 8] = [
    "scope",
    "tokens_full",
    "tokens_kept",
    "target_tokens",
    "reduction",
    "attention_ops_full",
    "attention_ops_kept",
    "ops_ratio",
];
const DECISIONS_HEADER: [&str; 7] = [
    "shot_num",
    "keyframe",
    "entity",
    "token_cost",
    "decision",
    "max_similarity",
    "entry_index",
];
const UPDATES_HEADER: [&str; 5] = [
    "shot_num",
    "entity",
    "evicted",
    "entries_after",
    "token_cost_after",
];
const PAIRS_HEADER: [&str; 8] = [
    "mode",
    "subject",
    "shot_i",
    "shot_j",
    "cos",
    "iou",
    "duplicate_risk",
    "penalized",
];

pub fn shot_dir(run_dir: &Path, shot_num: u32) -> PathBuf {
    run_dir.join("shots").join(format!("shot_{shot_num:03}"))
}

pub fn bank_after_path(run_dir: &Path, shot_num: u32) -> PathBuf {
    run_dir
        .join("bank")
        .join(format!("after_shot_{shot_num:03}.emvb"))
}

/// Snapshot the bank had before `shot_num` ran.
pub fn bank_before_path(run_dir: &Path, shot_num: u32) -> PathBuf {
    if shot_num <= 1 {
        run_dir.join(INITIAL_BANK_FILE)
    } else {
        bank_after_path(run_dir, shot_num - 1)
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: &[[String; N]]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn join_ids(ids: &[EntityId]) -> String {
    ids.iter()
        .map(EntityId::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

fn cost_row(scope: String, c: &CostReport) -> [String; 8] {
    [
        scope,
        c.tokens_full.to_string(),
        c.tokens_kept.to_string(),
        c.target_tokens.to_string(),
        format!("{:.6}", c.reduction),
        c.attention_ops_full.to_string(),
        c.attention_ops_kept.to_string(),
        format!("{:.6}", c.ops_ratio()),
    ]
}

fn decision_rows(shot: &ShotResult) -> Vec<[String; 7]> {
    shot.candidates
        .iter()
        .map(|c| {
            let (sim, index) = match &c.status {
                CandidateStatus::Decided(o) => (
                    o.max_similarity
                        .map_or_else(String::new, |s| format!("{s:.6}")),
                    o.entry_index.map_or_else(String::new, |i| i.to_string()),
                ),
                CandidateStatus::SkippedEmpty => (String::new(), String::new()),
            };
            [
                shot.shot_num.to_string(),
                c.keyframe.to_string(),
                c.entity.to_string(),
                c.token_cost.to_string(),
                c.status.as_str().to_string(),
                sim,
                index,
            ]
        })
        .collect()
}

/// Writes script and config copies plus the initial bank snapshot.
pub fn write_run_header(
    run_dir: &Path,
    script: &StoryScript,
    config: &RunConfig,
    bank: &EntityBank,
) -> Result<()> {
    create_dir(run_dir)?;
    let mut script_text = script.to_json();
    script_text.push('\n');
    write_text(&run_dir.join(SCRIPT_FILE), &script_text)?;
    write_text(&run_dir.join(CONFIG_FILE), &config.to_json())?;
    bank.save(run_dir.join(INITIAL_BANK_FILE))
}

/// Writes one shot's tensors, masks, cost and decisions, and the bank
/// snapshot taken after it.
pub fn write_shot(run_dir: &Path, shot: &ShotResult) -> Result<()> {
    let dir = shot_dir(run_dir, shot.shot_num);
    create_dir(&dir.join("frames"))?;
    for (i, frame) in shot.frames.iter().enumerate() {
        write_tensor(
            dir.join("frames").join(format!("f{i:03}.emvt")),
            &frame.to_tensor(),
        )?;
    }
    for (entity, masks) in &shot.masks {
        let mdir = dir.join("masks").join(entity.as_str());
        create_dir(&mdir)?;
        for (i, m) in masks.iter().enumerate() {
            write_mask(mdir.join(format!("f{i:03}.emvm")), m)?;
        }
    }
    write_tensor(dir.join("latent.emvt"), &shot.latent.to_tensor())?;
    write_text(&dir.join("cost.txt"), &shot.cost.to_text())?;
    write_csv(
        &dir.join("decisions.csv"),
        DECISIONS_HEADER,
        &decision_rows(shot),
    )?;
    create_dir(&run_dir.join("bank"))?;
    shot.bank_after
        .save(bank_after_path(run_dir, shot.shot_num))
}

/// Writes the per-shot and aggregate tables under `reports/`. An empty run
/// yields header-only tables.
pub fn emit_reports(run_dir: &Path, shots: &[ShotResult], metrics: &MetricsReport) -> Result<()> {
    let dir = run_dir.join("reports");
    create_dir(&dir)?;
    let shot_rows: Vec<[String; 12]> = shots
        .iter()
        .map(|s| {
            let c = &s.cost;
            [
                s.shot_num.to_string(),
                join_ids(&s.entities),
                s.slots.len().to_string(),
                join_ids(&s.missing),
                c.tokens_full.to_string(),
                c.tokens_kept.to_string(),
                c.target_tokens.to_string(),
                format!("{:.6}", c.reduction),
                c.attention_ops_full.to_string(),
                c.attention_ops_kept.to_string(),
                s.keyframes
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(" "),
                s.updated.to_string(),
            ]
        })
        .collect();
    write_csv(&dir.join("shots.csv"), SHOTS_HEADER, &shot_rows)?;
    write_cost_summary(
        run_dir,
        &shots
            .iter()
            .map(|s| (s.shot_num, s.cost))
            .collect::<Vec<_>>(),
    )?;
    let decisions: Vec<[String; 7]> = shots.iter().flat_map(decision_rows).collect();
    write_csv(&dir.join("decisions.csv"), DECISIONS_HEADER, &decisions)?;
    let updates: Vec<[String; 5]> = shots
        .iter()
        .flat_map(|s| {
            s.updates.iter().map(move |u| {
                [
                    s.shot_num.to_string(),
                    u.entity.to_string(),
                    u.evicted
                        .iter()
                        .map(u32::to_string)
                        .collect::<Vec<_>>()
                        .join(" "),
                    u.entries_after.to_string(),
                    u.token_cost_after.to_string(),
                ]
            })
        })
        .collect();
    write_csv(&dir.join("bank_updates.csv"), UPDATES_HEADER, &updates)?;
    write_metrics(run_dir, metrics)
}

/// Per-shot cost rows followed by a `total` row when any shot exists.
pub fn write_cost_summary(run_dir: &Path, costs: &[(u32, CostReport)]) -> Result<()> {
    let dir = run_dir.join("reports");
    create_dir(&dir)?;
    let mut rows: Vec<[String; 8]> = costs
        .iter()
        .map(|(n, c)| cost_row(format!("shot_{n:03}"), c))
        .collect();
    if !costs.is_empty() {
        let all: Vec<CostReport> = costs.iter().map(|(_, c)| *c).collect();
        rows.push(cost_row("total".into(), &CostReport::aggregate(&all)));
    }
    write_csv(&dir.join("cost_summary.csv"), COST_HEADER, &rows)
}

pub fn write_metrics(run_dir: &Path, metrics: &MetricsReport) -> Result<()> {
    let dir = run_dir.join("reports");
    create_dir(&dir)?;
    write_text(&dir.join("metrics.txt"), &metrics.to_text())?;
    write_csv(
        &dir.join("metric_pairs.csv"),
        PAIRS_HEADER,
        &metrics.pair_rows(),
    )
}

/// Writes the complete run directory for `outcome`.
pub fn write_run_dir(
    run_dir: &Path,
    script: &StoryScript,
    config: &RunConfig,
    outcome: &RunOutcome,
) -> Result<()> {
    write_run_header(run_dir, script, config, &outcome.initial_bank)?;
    for shot in &outcome.shots {
        write_shot(run_dir, shot)?;
    }
    outcome.bank.save(run_dir.join(FINAL_BANK_FILE))?;
    emit_reports(run_dir, &outcome.shots, &outcome.metrics)
}

/// Frames and masks of one shot read back from a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredShot {
    pub shot_num: u32,
    pub frames: Vec<Frame>,
    pub masks: BTreeMap<EntityId, Vec<PixelMask>>,
    pub cost: CostReport,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(e.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

pub fn read_script(path: &Path) -> Result<StoryScript> {
    parse_script(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_run_config(run_dir: &Path) -> Result<RunConfig> {
    let p = run_dir.join(CONFIG_FILE);
    RunConfig::from_json(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
}

/// Every shot present under `shots/`, in shot order.
pub fn read_shots(run_dir: &Path) -> Result<Vec<StoredShot>> {
    let root = run_dir.join("shots");
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut shots = Vec::new();
    for dir in sorted_entries(&root)? {
        let name = file_stem(&dir);
        let shot_num: u32 = name
            .strip_prefix("shot_")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Format(format!("unexpected shot directory {}", dir.display())))?;
        let frames = sorted_entries(&dir.join("frames"))?
            .iter()
            .map(|p| read_tensor(p).and_then(Frame::try_from))
            .collect::<Result<Vec<_>>>()?;
        let mut masks = BTreeMap::new();
        let mask_root = dir.join("masks");
        if mask_root.exists() {
            for edir in sorted_entries(&mask_root)? {
                let entity: EntityId = file_stem(&edir).parse().map_err(|_| {
                    Error::Format(format!("unexpected mask directory {}", edir.display()))
                })?;
                let ms = sorted_entries(&edir)?
                    .iter()
                    .map(read_mask)
                    .collect::<Result<Vec<_>>>()?;
                if ms.len() != frames.len() {
                    return Err(Error::CountMismatch {
                        expected: frames.len(),
                        found: ms.len(),
                    });
                }
                masks.insert(entity, ms);
            }
        }
        let cost_path = dir.join("cost.txt");
        let cost = CostReport::from_text(
            &fs::read_to_string(&cost_path).map_err(|e| Error::io(&cost_path, e))?,
        )?;
        shots.push(StoredShot {
            shot_num,
            frames,
            masks,
            cost,
        });
    }
    shots.sort_by_key(|s| s.shot_num);
    Ok(shots)
}
