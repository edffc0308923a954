//! One provisioning run: measurement, computation, operator decision and
//! commit or rollback, timed on a virtual clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::calib::{CalibOptions, CalibResult, CalibrationDataset, DatasetDesign, DEFAULT_RECORDS};
use crate::dlm::DlmExtract;
use crate::error::{Error, Result};
use crate::gn::ParameterSet;
use crate::plant::{dlm_settings, DlmProfile, NoiseSpec, OpticalLinePlant};

use super::device::{DeviceSet, FXC_ID, OSA_ID, ROUTE_NEW};
use super::pipeline::{build_models, CalibInputs, DlmAcquisition, Models};
use super::state::{DecisionKind, Event, Machine, RunState};
use super::store::{BlobKind, HybridStore};
use super::sweep::{
    configure_transparency, power_sweep, stability_run, StabilityReport, SweepRange, SweepReport, Transparency,
    BOOSTER_SWEEP,
};

/// Simulated phase durations, minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseDurations {
    pub dlm_setup: f64,
    pub dlm_measure: f64,
    pub dlm_compute: f64,
    pub calib_setup_measure: f64,
    /// Calibration computation together with result visualization.
    pub calib_compute: f64,
    pub visualize: f64,
    /// Writing the final configuration, adopted or restored.
    pub final_config: f64,
}

impl Default for PhaseDurations {
    fn default() -> Self {
        Self {
            dlm_setup: 3.0,
            dlm_measure: 1.0,
            dlm_compute: 3.5,
            calib_setup_measure: 33.0,
            calib_compute: 15.0,
            visualize: 0.0,
            final_config: 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub durations: PhaseDurations,
    /// Simulated minutes the operator has before the run reverts.
    pub decision_timeout_min: f64,
    /// Instrument noise; the plant's own when absent.
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
    pub records: usize,
    pub design: DatasetDesign,
    pub sweep: SweepRange,
    pub lm_iterations: usize,
    pub polish_evaluations: usize,
    /// Post-commit stability samples, one per interval.
    pub stability_samples: usize,
    pub stability_interval_min: f64,
    /// Artifacts go to `<dir>/<run_id>/` when set.
    pub artifacts_dir: Option<PathBuf>,
    /// Wall-clock milliseconds slept per simulated minute; 0 runs as fast
    /// as the computation allows.
    pub wall_ms_per_min: f64,
    /// Makes the named phase fail, for exercising rollback.
    pub fail_in: Option<RunState>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = CalibOptions::default();
        Self {
            run_id: "run".into(),
            durations: PhaseDurations::default(),
            decision_timeout_min: 10.0,
            noise: None,
            seed: 1,
            records: DEFAULT_RECORDS,
            design: DatasetDesign::Structured,
            sweep: BOOSTER_SWEEP,
            lm_iterations: c.lm_iterations,
            polish_evaluations: c.polish_evaluations,
            stability_samples: 300,
            stability_interval_min: 1.0,
            artifacts_dir: None,
            wall_ms_per_min: 0.0,
            fail_in: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub state: RunState,
    pub start_min: f64,
    pub end_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision: DecisionKind,
    pub decided_by: String,
    /// Simulated minute the decision took effect.
    pub at_min: f64,
    pub timed_out: bool,
}

/// Run status as shown to operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisioningRun {
    pub run_id: String,
    pub plant: String,
    pub state: RunState,
    pub timeline: Vec<TimelineEntry>,
    pub decision: Option<DecisionRecord>,
    /// Simulated minutes from start to the last finished phase.
    pub elapsed_min: f64,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl ProvisioningRun {
    pub fn phase(&self, state: RunState) -> Option<&TimelineEntry> {
        self.timeline.iter().find(|e| e.state == state)
    }

    /// Phases on the critical path: those that end no earlier than every
    /// phase overlapping them.
    pub fn critical_path(&self) -> Vec<RunState> {
        self.timeline
            .iter()
            .filter(|e| {
                !self.timeline.iter().any(|o| {
                    o.state != e.state && o.start_min <= e.start_min && o.start_min < e.end_min && o.end_min > e.end_min
                })
            })
            .map(|e| e.state)
            .collect()
    }
}

/// Everything a run computed; fields fill in as phases finish.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunOutputs {
    pub dlm_profile: Option<DlmProfile>,
    pub dataset1: Option<DlmExtract>,
    /// Calibration measurements; the fit over them is dataset 2.
    pub records: Option<CalibrationDataset>,
    pub calibration: Option<CalibResult>,
    pub baseline: Option<ParameterSet>,
    pub params: Option<ParameterSet>,
    pub transparency: Option<Transparency>,
    pub sweep: Option<SweepReport>,
    pub stability: Option<StabilityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: DecisionKind,
    pub decided_by: String,
    /// Simulated minutes spent in review.
    pub after_min: f64,
}

/// The operator gate. `decide` returns `None`, or a decision later than
/// `timeout_min`, to let the run time out.
pub trait DecisionSource {
    /// Called after every state change.
    fn observe(&mut self, _run: &ProvisioningRun, _outputs: &RunOutputs) {}
    fn decide(&mut self, run: &ProvisioningRun, outputs: &RunOutputs, timeout_min: f64) -> Option<Decision>;
}

/// Decides the same way every time after a fixed review.
#[derive(Debug, Clone, Copy)]
pub struct AutoDecision {
    pub kind: DecisionKind,
    pub review_min: f64,
}

/// Review time of an operator who accepts the results on sight, minutes.
pub const DEFAULT_REVIEW_MIN: f64 = 1.0;

impl AutoDecision {
    pub fn adopt() -> Self {
        Self { kind: DecisionKind::Adopt, review_min: DEFAULT_REVIEW_MIN }
    }

    pub fn revert() -> Self {
        Self { kind: DecisionKind::Revert, review_min: DEFAULT_REVIEW_MIN }
    }
}

impl DecisionSource for AutoDecision {
    fn decide(&mut self, _: &ProvisioningRun, _: &RunOutputs, _: f64) -> Option<Decision> {
        Some(Decision { kind: self.kind, decided_by: "auto".into(), after_min: self.review_min })
    }
}

/// Never answers, so the run times out.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoDecision;

impl DecisionSource for NoDecision {
    fn decide(&mut self, _: &ProvisioningRun, _: &RunOutputs, _: f64) -> Option<Decision> {
        None
    }
}

/// Waits up to `wait` of wall-clock time for a decision sent by another
/// thread.
pub struct ChannelDecision {
    pub rx: mpsc::Receiver<(DecisionKind, String)>,
    pub wait: Duration,
}

impl DecisionSource for ChannelDecision {
    fn decide(&mut self, _: &ProvisioningRun, _: &RunOutputs, _: f64) -> Option<Decision> {
        let (kind, decided_by) = self.rx.recv_timeout(self.wait).ok()?;
        Some(Decision { kind, decided_by, after_min: DEFAULT_REVIEW_MIN })
    }
}

pub struct RunOutcome {
    pub run: ProvisioningRun,
    pub outputs: RunOutputs,
    pub store: HybridStore,
    pub devices: DeviceSet,
    /// Running device configurations before the run.
    pub pre_run_snapshot: BTreeMap<String, Vec<u8>>,
}

struct Runner<'a> {
    plant: &'a OpticalLinePlant,
    cfg: &'a RunConfig,
    noise: NoiseSpec,
    machine: Machine,
    run: ProvisioningRun,
    clock: f64,
    outputs: RunOutputs,
    store: HybridStore,
    devices: DeviceSet,
    snapshot: BTreeMap<String, Vec<u8>>,
    acquisition: Option<DlmAcquisition>,
    source: &'a mut dyn DecisionSource,
}

impl Runner<'_> {
    fn event(&mut self, ev: Event) -> Result<()> {
        self.run.state = self.machine.apply(ev)?;
        self.source.observe(&self.run, &self.outputs);
        Ok(())
    }

    fn check_fault(&self, state: RunState) -> Result<()> {
        if self.cfg.fail_in == Some(state) {
            return Err(Error::Domain(format!("injected failure in {state:?}")));
        }
        Ok(())
    }

    fn record(&mut self, state: RunState, start: f64, minutes: f64) {
        self.run.timeline.push(TimelineEntry { state, start_min: start, end_min: start + minutes });
    }

    /// Moves the clock forward, sleeping when the run is paced.
    fn advance(&mut self, minutes: f64) {
        if self.cfg.wall_ms_per_min > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(minutes * self.cfg.wall_ms_per_min / 1e3));
        }
        self.clock += minutes;
        self.run.elapsed_min = self.clock;
    }

    fn phase(&mut self, state: RunState, minutes: f64, work: impl FnOnce(&mut Self) -> Result<()>) -> Result<()> {
        self.check_fault(state)?;
        work(self)?;
        let start = self.clock;
        self.record(state, start, minutes);
        self.advance(minutes);
        self.event(Event::PhaseDone)
    }

    fn execute(&mut self) -> Result<()> {
        let d = self.cfg.durations;
        let plant = self.plant;
        let noise = self.noise;
        let seed = self.cfg.seed;
        self.event(Event::Start)?;
        self.phase(RunState::DlmSetup, d.dlm_setup, |r| r.devices.apply_settings(&dlm_settings(plant)))?;
        self.phase(RunState::DlmMeasure, d.dlm_measure, |r| {
            let acq = DlmAcquisition::measure(plant, &noise, seed)?;
            r.store.put_local("dlm/profile", BlobKind::RawSeries, &acq.profile)?;
            r.store.put_local("dlm/cd", BlobKind::RawSeries, &acq.cd_ps_nm)?;
            r.store.put_local("dlm/launch", BlobKind::RawSeries, &acq.launch_dbm)?;
            r.outputs.dlm_profile = Some(acq.profile.clone());
            r.acquisition = Some(acq);
            Ok(())
        })?;

        // DLM computation runs beside the calibration measurements.
        self.devices.set(OSA_ID, "sweeping", true.into())?;
        let fault = |s: RunState| {
            if self.cfg.fail_in == Some(s) {
                Err(Error::Domain(format!("injected failure in {s:?}")))
            } else {
                Ok(())
            }
        };
        let acq = self.acquisition.take().expect("measured above");
        let cfg = self.cfg;
        let (dlm, csm) = rayon::join(
            || -> Result<DlmExtract> {
                fault(RunState::DlmCompute)?;
                acq.extract(plant)
            },
            || -> Result<CalibInputs> {
                fault(RunState::CalibSetupMeasure)?;
                CalibInputs::measure(plant, cfg.records, cfg.design, &noise, seed)
            },
        );
        let start = self.clock;
        let dlm = dlm?;
        self.store.put_local("dataset1", BlobKind::Parameters, &dlm)?;
        self.store.put_remote("dataset1", BlobKind::Parameters, &dlm)?;
        self.outputs.dataset1 = Some(dlm);
        self.record(RunState::DlmCompute, start, d.dlm_compute);
        self.event(Event::DlmComputeDone)?;
        let inputs = csm?;
        self.store.put_local("calib/records", BlobKind::RawSeries, &inputs.records)?;
        self.store.put_local("span_totals", BlobKind::RawSeries, &inputs.span_totals)?;
        self.store.put_local("b2b", BlobKind::RawSeries, &inputs.transceivers)?;
        self.devices.set(OSA_ID, "sweeping", false.into())?;
        self.record(RunState::CalibSetupMeasure, start, d.calib_setup_measure);
        self.advance(d.calib_setup_measure.max(d.dlm_compute));
        self.event(Event::PhaseDone)?;

        self.phase(RunState::CalibCompute, d.calib_compute, |r| {
            let dlm = r.outputs.dataset1.as_ref().expect("computed above");
            let opts = CalibOptions {
                lm_iterations: cfg.lm_iterations,
                polish_evaluations: cfg.polish_evaluations,
                ..CalibOptions::default()
            };
            let Models { calibration, params, baseline } = build_models(plant, dlm, &inputs, &opts)?;
            let transparency = configure_transparency(&params, &plant.ete_launch(), cfg.sweep)?;
            let sweep = power_sweep(
                plant,
                &params,
                &baseline,
                &transparency.settings,
                &transparency.booster_id,
                cfg.sweep,
                &noise,
                seed.wrapping_add(100),
            )?;
            r.run.warnings.extend(params.notes.iter().cloned());
            r.run.warnings.extend(transparency.warnings.iter().cloned());
            r.store.put_remote("params", BlobKind::Parameters, &params)?;
            r.store.put_remote("baseline", BlobKind::Parameters, &baseline)?;
            r.store.put_local("dataset2", BlobKind::Parameters, &calibration)?;
            r.store.put_remote("calibration", BlobKind::Report, &calibration)?;
            r.store.put_remote("transparency", BlobKind::Parameters, &transparency)?;
            r.store.put_remote("sweep", BlobKind::Report, &sweep)?;
            r.outputs.records = Some(inputs.records);
            r.outputs.calibration = Some(calibration);
            r.outputs.baseline = Some(baseline);
            r.outputs.params = Some(params);
            r.outputs.transparency = Some(transparency);
            r.outputs.sweep = Some(sweep);
            Ok(())
        })?;
        self.phase(RunState::Visualize, d.visualize, |_| Ok(()))?;

        let timeout = self.cfg.decision_timeout_min;
        let decision = self.source.decide(&self.run, &self.outputs, timeout).filter(|d| d.after_min <= timeout);
        let start = self.clock;
        let record = match &decision {
            Some(d) => DecisionRecord {
                decision: d.kind,
                decided_by: d.decided_by.clone(),
                at_min: start + d.after_min,
                timed_out: false,
            },
            None => DecisionRecord {
                decision: DecisionKind::Revert,
                decided_by: "timeout".into(),
                at_min: start + timeout,
                timed_out: true,
            },
        };
        let waited = record.at_min - start;
        self.record(RunState::AwaitDecision, start, waited);
        self.advance(waited);
        self.run.decision = Some(record.clone());
        self.event(match decision {
            Some(d) => Event::Decide(d.kind),
            None => Event::DecisionTimeout,
        })?;

        match record.decision {
            DecisionKind::Adopt => {
                let commit = self.check_fault(RunState::Commit).and_then(|_| {
                    let t = self.outputs.transparency.as_ref().expect("computed above").settings.clone();
                    self.devices.apply_settings(&t)?;
                    self.devices.set(FXC_ID, "route", ROUTE_NEW.into())
                });
                let start = self.clock;
                match commit {
                    Ok(()) => {
                        self.record(RunState::Commit, start, d.final_config);
                        self.advance(d.final_config);
                        self.stability()?;
                        self.event(Event::PhaseDone)?;
                    }
                    Err(e) => {
                        self.run.error = Some(e.to_string());
                        self.record(RunState::Commit, start, 0.0);
                        self.event(Event::Fail)?;
                        self.revert()?;
                    }
                }
            }
            DecisionKind::Revert => self.revert()?,
        }
        Ok(())
    }

    fn revert(&mut self) -> Result<()> {
        self.devices.restore(&self.snapshot)?;
        let start = self.clock;
        let m = self.cfg.durations.final_config;
        self.record(RunState::Revert, start, m);
        self.advance(m);
        self.event(Event::PhaseDone)
    }

    /// Transceiver readings at the committed configuration, taken before
    /// the run reports Done. Not part of the timed schedule.
    fn stability(&mut self) -> Result<()> {
        let settings = self.devices.settings()?;
        let r = stability_run(
            self.plant,
            &settings,
            self.cfg.stability_samples,
            self.cfg.stability_interval_min,
            &self.noise,
            self.cfg.seed.wrapping_add(200),
        )?;
        self.store.put_local("stability", BlobKind::RawSeries, &r)?;
        let summary: BTreeMap<&str, f64> = r.channels.iter().map(|c| (c.trx_id.as_str(), c.three_sigma_db)).collect();
        self.store.put_remote("stability_summary", BlobKind::Report, &summary)?;
        self.outputs.stability = Some(r);
        Ok(())
    }

    /// Rolls devices back after a failed phase.
    fn fail(&mut self, err: Error) {
        self.run.error = Some(err.to_string());
        if let Err(e) = self.devices.restore(&self.snapshot) {
            self.run.warnings.push(format!("rollback failed: {e}"));
        }
        if !self.run.state.is_terminal() {
            match self.machine.apply(Event::Fail) {
                Ok(s) => self.run.state = s,
                Err(_) => self.run.state = RunState::Failed,
            }
        }
        self.source.observe(&self.run, &self.outputs);
    }

    fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if let Some(v) = &self.outputs.dataset1 {
            write_json(dir, "dataset1.json", v)?;
        }
        if let Some(v) = &self.outputs.calibration {
            write_json(dir, "dataset2.json", v)?;
        }
        if let Some(v) = &self.outputs.params {
            write_json(dir, "params.json", v)?;
        }
        if let Some(v) = &self.outputs.sweep {
            std::fs::write(dir.join("sweep.csv"), v.to_csv())?;
        }
        write_json(dir, "timeline.json", &self.run.timeline)?;
        write_json(dir, "decision.json", &self.run.decision)
    }
}

fn write_json(dir: &Path, name: &str, v: &impl Serialize) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

/// Runs the whole procedure against `plant`. Failures end in
/// [`RunState::Failed`] with every device restored; the error is reported
/// on the run rather than returned.
pub fn run_provisioning(
    plant: &OpticalLinePlant,
    cfg: &RunConfig,
    source: &mut dyn DecisionSource,
) -> Result<RunOutcome> {
    plant.validate()?;
    let devices = DeviceSet::for_plant(plant)?;
    let snapshot = devices.snapshot();
    let mut r = Runner {
        plant,
        cfg,
        noise: cfg.noise.unwrap_or(plant.noise),
        machine: Machine::default(),
        run: ProvisioningRun {
            run_id: cfg.run_id.clone(),
            plant: plant.name.clone(),
            state: RunState::Idle,
            timeline: Vec::new(),
            decision: None,
            elapsed_min: 0.0,
            error: None,
            warnings: Vec::new(),
        },
        clock: 0.0,
        outputs: RunOutputs::default(),
        store: HybridStore::new(),
        devices,
        snapshot: snapshot.clone(),
        acquisition: None,
        source,
    };
    if let Err(e) = r.execute() {
        r.fail(e);
    }
    if let Some(dir) = &cfg.artifacts_dir {
        r.write_artifacts(&dir.join(&cfg.run_id))?;
    }
    Ok(RunOutcome { run: r.run, outputs: r.outputs, store: r.store, devices: r.devices, pre_run_snapshot: snapshot })
}
