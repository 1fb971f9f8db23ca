use anyhow::{bail, Context, Result};
use serde::Serialize;
use tsfb_core::evalproto::{lookahead_audit, AuditReport, AuditVerdict, Inputs, Mutation};

use crate::config::RunConfig;

#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub model: Option<String>,
    pub window: Option<usize>,
    pub vintage: usize,
    pub asset: Option<String>,
    /// Distance in rows from the cutoff boundary of both mutated cells.
    pub offset: usize,
    pub value: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            model: None,
            window: None,
            vintage: 0,
            asset: None,
            offset: 0,
            value: 0.25,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditLine {
    pub model: String,
    pub window: usize,
    pub post_cutoff: AuditReport,
    pub control: AuditReport,
    pub ok: bool,
}

/// For each selected model and window, mutates one return just after the
/// vintage cutoff (must not matter) and one just before it (control).
pub fn cmd_audit(cfg: &RunConfig, opts: &AuditOptions) -> Result<Vec<AuditLine>> {
    cfg.validate()?;
    let panel = cfg.load_panel()?;
    let auxiliary = cfg.load_auxiliary()?;
    let bases = cfg.load_bases()?;
    let vintages = cfg.vintages(&panel)?;
    let v = vintages
        .get(opts.vintage)
        .with_context(|| format!("no vintage {}", opts.vintage))?;
    let asset = match &opts.asset {
        Some(id) => panel.asset_index(id).with_context(|| format!("unknown asset {id}"))?,
        None => 0,
    };
    if opts.offset >= v.eval_rows.len() || opts.offset >= v.train_rows.len() {
        bail!("offset {} leaves the vintage", opts.offset);
    }
    let post = Mutation {
        row: v.eval_rows.start + opts.offset,
        asset,
        value: opts.value,
    };
    let pre = Mutation {
        row: v.train_rows.end - 1 - opts.offset,
        ..post
    };
    let mut out = Vec::new();
    for spec in &cfg.models {
        if opts.model.as_ref().is_some_and(|m| m != &spec.name) {
            continue;
        }
        for &w in &cfg.plan.window_sizes {
            if opts.window.is_some_and(|x| x != w) {
                continue;
            }
            let inputs = Inputs {
                panel: &panel,
                auxiliary: &auxiliary,
                base: bases.get(&spec.name),
                seed: cfg.seed,
            };
            let post_cutoff = lookahead_audit(&cfg.plan, spec, w, &inputs, opts.vintage, post)?;
            let control = lookahead_audit(&cfg.plan, spec, w, &inputs, opts.vintage, pre)?;
            let ok = post_cutoff.verdict == AuditVerdict::Pass && control.verdict != AuditVerdict::Leak;
            eprintln!(
                "{} w{w}: post-cutoff {:?}, control {:?}",
                spec.name, post_cutoff.verdict, control.verdict
            );
            out.push(AuditLine {
                model: spec.key(&cfg.plan, w)?,
                window: w,
                post_cutoff,
                control,
                ok,
            });
        }
    }
    if out.is_empty() {
        bail!("no model/window matched the audit selection");
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(out)
}
