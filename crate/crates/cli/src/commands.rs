use std::path::{Path, PathBuf};

use log::info;
use normbundle::counterfactual::write_long_csv;
use normbundle::equilibrium::{default_starts, simplex_lattice};
use normbundle::{
    classify, fit, load_dataset, residualize_cohort_shares, run_counterfactual, sandwich, save_dataset, simulate,
    solve_equilibrium, ClassifyOptions, CounterfactualInput, CounterfactualOptions, CovariateDist, Error, LoadOptions,
    PanelDataset, PolicySpec, ProbabilityRule, Recode, Result, Theta,
};
use serde_json::{json, Value};

use crate::config::{outcome_label, RunConfig};
use crate::report::{delta, num, se, table};

pub struct Context {
    pub config: RunConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub recode: Vec<String>,
}

/// What a subcommand produced. `error` is set when a later stage failed
/// after earlier results were obtained.
#[derive(Default)]
pub struct Output {
    pub results: Value,
    pub warnings: Vec<String>,
    pub text: String,
    pub error: Option<Error>,
}

impl Context {
    fn out_path(&self, name: &str) -> Option<PathBuf> {
        self.out.as_ref().map(|d| d.join(name))
    }

    fn load(&self, warnings: &mut Vec<String>) -> Result<(PanelDataset, Value)> {
        let path = self.data.as_ref().ok_or_else(|| Error::invalid("this command needs --data"))?;
        let recodes = self
            .config
            .estimation
            .recode
            .iter()
            .chain(&self.recode)
            .map(|r| r.parse::<Recode>())
            .collect::<Result<Vec<_>>>()?;
        let opts = LoadOptions {
            covariates: self.config.model.covariates.clone(),
            recodes,
        };
        let loaded = load_dataset(path, &opts)?;
        let dropped = loaded.dropped_missing_choice + loaded.dropped_missing_covariate;
        if dropped > 0 {
            warnings.push(format!(
                "dropped {} rows with a missing choice and {} with a missing covariate",
                loaded.dropped_missing_choice, loaded.dropped_missing_covariate
            ));
        }
        if loaded.data.is_empty() {
            return Err(Error::invalid("no usable rows in the data"));
        }
        let summary = json!({
            "rows_read": loaded.rows_read,
            "rows_used": loaded.data.len(),
            "dropped_missing_choice": loaded.dropped_missing_choice,
            "dropped_missing_covariate": loaded.dropped_missing_covariate,
            "covariates": loaded.data.covariate_names,
            "groups": loaded.data.groups().len(),
            "periods": loaded.data.periods(),
        });
        Ok((loaded.data, summary))
    }

    fn theta_for(&self, n_covariates: usize) -> Result<Theta> {
        let theta = self.config.theta()?.ok_or_else(|| Error::invalid("this command needs a [theta] section"))?;
        if theta.n_covariates() != n_covariates {
            return Err(Error::DimensionMismatch {
                what: "theta coefficients",
                expected: n_covariates,
                got: theta.n_covariates(),
            });
        }
        Ok(theta)
    }

    /// Covariate mixture for equilibrium work: the configured point, else
    /// the last period of the data, else the intercept alone.
    fn x_dist(&self, warnings: &mut Vec<String>) -> Result<(CovariateDist, Value)> {
        if let Some(x) = &self.config.equilibrium.x {
            return Ok((CovariateDist::point(x.clone()), json!({"source": "config", "x": x})));
        }
        if self.data.is_some() {
            let (data, _) = self.load(warnings)?;
            let last = *data.periods().last().expect("nonempty");
            let rows = data.covariates_in_period(last);
            return Ok((CovariateDist::empirical(&rows)?, json!({"source": "data", "period": last, "rows": rows.len()})));
        }
        Ok((CovariateDist::point(vec![1.0]), json!({"source": "intercept", "x": [1.0]})))
    }

    fn starts(&self) -> Vec<normbundle::ShareVector> {
        match self.config.equilibrium.lattice {
            Some(m) => simplex_lattice(m),
            None => default_starts(),
        }
    }
}

fn write_file(path: Option<PathBuf>, write: impl FnOnce(&Path) -> Result<()>) -> Result<Option<String>> {
    match path {
        Some(p) => {
            write(&p)?;
            Ok(Some(p.display().to_string()))
        }
        None => Ok(None),
    }
}

pub fn simulate_cmd(ctx: &Context) -> Result<Output> {
    let cfg = ctx.config.sim_config()?;
    let out = simulate(&cfg)?;
    info!("simulated {} rows", out.data.len());
    let data_file = write_file(ctx.out_path("data.csv"), |p| save_dataset(&out.data, p))?;
    let mut rows = Vec::new();
    for (g, path) in out.share_path.iter().enumerate() {
        for (t, s) in path.iter().enumerate() {
            rows.push(vec![g.to_string(), (t + 1).to_string(), num(s.p_a), num(s.p_b), num(s.p_ab)]);
        }
    }
    let header = ["group", "period", "p_A", "p_B", "p_AB"].map(String::from);
    Ok(Output {
        results: json!({
            "rows": out.data.len(),
            "covariates": out.data.covariate_names,
            "share_path": out.share_path,
            "data_file": data_file,
        }),
        text: format!("Realized sample shares\n{}", table(&header, &rows)),
        ..Output::default()
    })
}

pub fn estimate_cmd(ctx: &Context) -> Result<Output> {
    let mut warnings = Vec::new();
    let (data, summary) = ctx.load(&mut warnings)?;
    let cfg = ctx.config.fit_config(&data.covariate_names)?;
    let f = fit(&data, &cfg)?;
    warnings.extend(f.warnings.iter().cloned());
    let fit_json = json!({
        "param_names": f.param_names,
        "estimates": f.estimates,
        "theta_hat": f.theta_hat,
        "loglik": f.loglik,
        "converged": f.converged,
        "best_start": f.best_start,
        "starts": f.start_table,
        "n_obs": f.n_obs,
        "gradient": f.gradient,
        "near_bound": f.near_bound,
        "absent_bundles": f.absent_bundles,
        "lagged_shares": f.lagged_share_table.cells,
    });
    let mut results = json!({"data": summary, "fit": fit_json, "inference": Value::Null});
    let header = ["parameter", "estimate", "(se)", "(se, uncorrected)"].map(String::from);
    match sandwich(&data, &f, &cfg, &ctx.config.inference) {
        Ok(inf) => {
            warnings.extend(inf.warnings.iter().cloned());
            let rows: Vec<Vec<String>> = (0..inf.param_names.len())
                .map(|k| vec![inf.param_names[k].clone(), num(inf.estimates[k]), se(inf.se[k]), se(inf.se_uncorrected[k])])
                .collect();
            let mut text = format!("Maximum likelihood estimates (n = {})\n{}", f.n_obs, table(&header, &rows));
            text.push_str(&format!("log-likelihood {:.4}\n", f.loglik));
            if let Some(w) = inf.wald_additivity {
                text.push_str(&format!("Wald s_AB = s_A + s_B: statistic {:.4}, p-value {:.4}\n", w.statistic, w.p_value));
            }
            results["inference"] = serde_json::to_value(&inf).expect("serializable");
            Ok(Output {
                results,
                warnings,
                text,
                error: None,
            })
        }
        Err(e) => {
            let rows: Vec<Vec<String>> = (0..f.param_names.len())
                .map(|k| vec![f.param_names[k].clone(), num(f.estimates[k]), "-".into(), "-".into()])
                .collect();
            Ok(Output {
                results,
                warnings,
                text: format!("Maximum likelihood estimates (n = {})\n{}", f.n_obs, table(&header, &rows)),
                error: Some(e),
            })
        }
    }
}

fn equilibrium_rows(set: &normbundle::EquilibriumSet) -> Vec<Vec<String>> {
    set.equilibria
        .iter()
        .map(|e| {
            vec![
                num(e.p_star.p_a),
                num(e.p_star.p_b),
                num(e.p_star.p_ab),
                num(e.spectral_radius),
                if e.stable { "stable" } else { "unstable" }.into(),
                e.d_qa_d_delta_b.map_or("-".into(), |d| format!("{d:+.4}")),
            ]
        })
        .collect()
}

pub fn equilibrium_cmd(ctx: &Context) -> Result<Output> {
    let mut warnings = Vec::new();
    let (dist, source) = ctx.x_dist(&mut warnings)?;
    let theta = ctx.theta_for(dist.n_covariates())?;
    let set = solve_equilibrium(&theta, &dist, &ctx.config.quadrature, &ctx.starts(), &ctx.config.equilibrium.solver)?;
    if !set.diverged.is_empty() {
        warnings.push(format!("{} starts did not converge", set.diverged.len()));
    }
    let header = ["p_A", "p_B", "p_AB", "radius", "stability", "dQ_A/d delta_B"].map(String::from);
    Ok(Output {
        results: json!({"covariates": source, "equilibria": set.equilibria, "diverged": set.diverged}),
        text: format!("Equilibria\n{}", table(&header, &equilibrium_rows(&set))),
        warnings,
        error: None,
    })
}

pub fn classify_cmd(ctx: &Context) -> Result<Output> {
    let mut warnings = Vec::new();
    let (dist, source) = ctx.x_dist(&mut warnings)?;
    let theta = ctx.theta_for(dist.n_covariates())?;
    let opts = ClassifyOptions {
        starts: ctx.starts(),
        solver: ctx.config.equilibrium.solver,
        refine: ctx.config.equilibrium.refine_exact.then_some(ProbabilityRule::Exact),
        ..ClassifyOptions::default()
    };
    let verdicts = classify(&theta, &dist, &ctx.config.quadrature, &opts)?;
    let mut text = String::from("Classification at stable equilibria\n");
    let rows: Vec<Vec<String>> = verdicts
        .iter()
        .map(|v| {
            vec![
                num(v.p_star.p_a),
                num(v.p_star.p_b),
                num(v.p_star.p_ab),
                v.theorem_branch.label().into(),
                format!("{:+.6}", v.d_qa_d_delta_b),
                if v.agree { "yes" } else { "no" }.into(),
            ]
        })
        .collect();
    let header = ["p_A", "p_B", "p_AB", "branch", "dQ_A/d delta_B", "agree"].map(String::from);
    text.push_str(&table(&header, &rows));
    for v in &verdicts {
        if !v.agree {
            warnings.push(format!("numerical sign disagrees with the branch at {:?}", v.p_star.to_array()));
        }
        text.push_str(&format!("norms are {}\n", v.theorem_branch.label()));
    }
    Ok(Output {
        results: json!({"covariates": source, "verdicts": verdicts}),
        text,
        warnings,
        error: None,
    })
}

pub fn counterfactual_cmd(ctx: &Context) -> Result<Output> {
    let mut warnings = Vec::new();
    let cf = ctx.config.counterfactual.clone().unwrap_or_default();
    if cf.policies.is_empty() {
        return Err(Error::invalid("counterfactual needs at least one [[counterfactual.policies]] entry"));
    }
    let (data, summary) = ctx.load(&mut warnings)?;
    let (theta, source) = match ctx.config.theta()? {
        Some(_) => (ctx.theta_for(data.n_covariates())?, "config"),
        None => {
            let cfg = ctx.config.fit_config(&data.covariate_names)?;
            let f = fit(&data, &cfg)?;
            warnings.extend(f.warnings.iter().cloned());
            (f.theta_hat, "estimated")
        }
    };
    let input = CounterfactualInput::from_data(&data)?;
    let opts = CounterfactualOptions { reanchor: cf.reanchor };
    let mut records = Vec::new();
    let mut policies = Vec::new();
    let mut rows = Vec::new();
    for (i, p) in cf.policies.iter().enumerate() {
        let spec = PolicySpec {
            delta_shift_a: p.delta_shift_a,
            delta_shift_b: p.delta_shift_b,
            s_scale_a: p.s_scale_a,
            s_ab_adjust_rule: p.s_ab_adjust_rule,
            horizons: cf.horizons.clone(),
        };
        let path = run_counterfactual(&input, &theta, &spec, &ctx.config.quadrature, &opts)?;
        records.extend(path.long_records(&p.name, i == 0));
        let mut row = vec![p.name.clone()];
        for d in &path.deltas {
            row.extend(d.delta.to_array().map(delta));
        }
        rows.push(row);
        policies.push(json!({
            "name": p.name,
            "spec": spec,
            "theta_policy": path.theta_policy,
            "deltas": path.deltas,
            "groups": path.groups.iter().map(|g| json!({"group": g.group, "deltas": g.deltas})).collect::<Vec<_>>(),
        }));
    }
    let paths_file = write_file(ctx.out_path("paths.csv"), |p| {
        write_long_csv(&records, std::io::BufWriter::new(std::fs::File::create(p)?))
    })?;
    let mut header = vec!["policy".to_string()];
    for h in &cf.horizons {
        for c in ["dp_A", "dp_B", "dp_AB"] {
            header.push(format!("{c} h={h}"));
        }
    }
    Ok(Output {
        results: json!({
            "data": summary,
            "theta": theta,
            "theta_source": source,
            "weights": input.groups.iter().map(|g| json!({"group": g.group, "weight": g.weight})).collect::<Vec<_>>(),
            "policies": policies,
            "paths_file": paths_file,
        }),
        text: format!("Policy minus baseline shares\n{}", table(&header, &rows)),
        warnings,
        error: None,
    })
}

pub fn residualize_cmd(ctx: &Context) -> Result<Output> {
    let mut warnings = Vec::new();
    let spec = ctx.config.residualize_spec()?;
    let (data, summary) = ctx.load(&mut warnings)?;
    let r = residualize_cohort_shares(&data, &spec)?;
    let rows: Vec<Vec<String>> = (0..r.periods.len())
        .map(|t| vec![r.periods[t].to_string(), r.n[t].to_string(), num(r.raw_share[t]), num(r.residualized[t])])
        .collect();
    let file = write_file(ctx.out_path("residualized.csv"), |p| {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(p)
            .map_err(Error::from)?;
        w.write_record(["period", "n", "raw_share", "residualized_share"])?;
        for t in 0..r.periods.len() {
            w.write_record([r.periods[t].to_string(), r.n[t].to_string(), r.raw_share[t].to_string(), r.residualized[t].to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let header = ["period", "n", "raw", "residualized"].map(String::from);
    let text = format!(
        "Residualized shares, outcome {}\n{}post-cutoff shift {} {}\n",
        outcome_label(spec.outcome),
        table(&header, &rows),
        num(r.tau),
        se(r.tau_se)
    );
    Ok(Output {
        results: json!({
            "data": summary,
            "periods": r.periods,
            "n": r.n,
            "raw_share": r.raw_share,
            "residualized_share": r.residualized,
            "tau": r.tau,
            "tau_se": r.tau_se,
            "regressors": r.regressors,
            "coefficients": r.coefficients,
            "file": file,
        }),
        text,
        warnings,
        error: None,
    })
}
