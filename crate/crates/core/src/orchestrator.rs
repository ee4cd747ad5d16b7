//! Training rounds end to end: activation, selection, local training,
//! quantization, transmission, decoding, aggregation and threshold control.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::channel::{calibrate_noise, synthesize_received, CommCodebook, Geometry, Position, SubroundTransmission};
use crate::config::{Scenario, ScenarioConfig};
use crate::data::{dirichlet_partition, split, Dataset, PartitionSpec, View};
use crate::decoder::{amp_decode, estimate_round_participants, truncated_poisson, tv_distance, DecoderConfig, TypeEstimate};
use crate::mdaircomp::{mdaircomp_decode, power_normalization, synthesize_reference};
use crate::model::{compute_update, Mlp, ModelParams};
use crate::quantizer::{num_subvectors, quantize_update, server_codebook_round, QuantCodebook};
use crate::rng::{stream, Stream};
use crate::selection::{self, Strategy, ThresholdState};
use crate::{Error, Result};

/// Train/server/test splits and the client shards of the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedData {
    pub train: Dataset,
    /// Held-out set the server uses for codebook refreshes.
    pub server: Dataset,
    pub test: Dataset,
    /// Row indices into `train`, one list per client.
    pub shards: Vec<Vec<usize>>,
}

impl FederatedData {
    /// Splits `full` and partitions the training portion across clients.
    pub fn build(full: &Dataset, cfg: &ScenarioConfig) -> Result<Self> {
        let [a, b, c] = cfg.data.split;
        let s = split(full.len(), (a, b, c), &mut stream(cfg.seed, Stream::DataSplit, 0, 0))?;
        let train = full.subset(&s.train);
        let spec = PartitionSpec {
            num_clients: cfg.selection.num_clients,
            alpha: cfg.data.dirichlet_alpha,
        };
        let shards = dirichlet_partition(train.labels(), &spec, &mut stream(cfg.seed, Stream::Partition, 0, 0))?;
        Ok(Self {
            server: full.subset(&s.val),
            test: full.subset(&s.test),
            train,
            shards,
        })
    }

    pub fn shard(&self, k: usize) -> View<'_> {
        self.train.select(&self.shards[k])
    }
}

/// `w_prev + eta_g * mean(updates)`; unchanged when there are no updates.
pub fn aggregate_perfect(w_prev: &ModelParams, updates: &[Vec<f64>], eta_g: f64) -> Result<ModelParams> {
    let mut w = w_prev.clone();
    if updates.is_empty() {
        return Ok(w);
    }
    let mut sum = vec![0.0; w.len()];
    for u in updates {
        if u.len() != w.len() {
            return Err(Error::dim("update length", w.len(), u.len()));
        }
        for (s, v) in sum.iter_mut().zip(u) {
            *s += v;
        }
    }
    let scale = eta_g / updates.len() as f64;
    for (wi, s) in w.0.iter_mut().zip(&sum) {
        *wi += scale * s;
    }
    Ok(w)
}

/// `block += eta_g * sum_m t_m q_m`. The block may be shorter than `Q` (last
/// subvector); an all-zero type leaves it unchanged.
pub fn aggregate_from_type(block: &mut [f64], types: &[f64], cb: &QuantCodebook, eta_g: f64) -> Result<()> {
    if types.len() != cb.len() {
        return Err(Error::config("quant", alloc::format!("type has {} entries, codebook {}", types.len(), cb.len())));
    }
    if block.len() > cb.dim() {
        return Err(Error::config("quant", "block is longer than the codeword dimension"));
    }
    for (m, &t) in types.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        for (b, q) in block.iter_mut().zip(cb.codeword(m)) {
            *b += eta_g * t * q;
        }
    }
    Ok(())
}

/// One subround as seen by the physical layer.
#[derive(Debug, Clone, Copy)]
pub struct Subround<'a> {
    pub round: usize,
    pub index: usize,
    pub tx: &'a SubroundTransmission,
    /// Positions of the transmitting clients, aligned with `tx.sends`.
    pub positions: &'a [Position],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubroundResult {
    pub estimate: TypeEstimate,
    /// Type of what was actually put on the air.
    pub truth: TypeEstimate,
}

/// Turns a subround transmission into a type estimate at the server.
pub trait TypeChannel: Sync {
    fn deliver(&self, sub: &Subround<'_>, rng: &mut ChaCha8Rng) -> Result<SubroundResult>;
}

/// Error-free delivery of the exact type.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactTypes {
    pub zones: usize,
    pub per_zone: usize,
}

impl TypeChannel for ExactTypes {
    fn deliver(&self, sub: &Subround<'_>, _rng: &mut ChaCha8Rng) -> Result<SubroundResult> {
        let t = TypeEstimate::from_multiplicities(&sub.tx.multiplicities(self.zones, self.per_zone), self.zones, self.per_zone);
        Ok(SubroundResult {
            estimate: t.clone(),
            truth: t,
        })
    }
}

/// TUMA over the D-MIMO channel with the AMP decoder.
#[derive(Debug, Clone)]
pub struct TumaChannel {
    pub geometry: Arc<Geometry>,
    pub codebook: Arc<CommCodebook>,
    pub zone_lsfc: Vec<Vec<f64>>,
    pub prior: Vec<f64>,
    pub decoder: DecoderConfig,
    pub power: f64,
    pub noise_var: f64,
}

impl TypeChannel for TumaChannel {
    fn deliver(&self, sub: &Subround<'_>, rng: &mut ChaCha8Rng) -> Result<SubroundResult> {
        let cb = &self.codebook;
        let truth = TypeEstimate::from_multiplicities(&sub.tx.multiplicities(cb.zones, cb.per_zone), cb.zones, cb.per_zone);
        let y = synthesize_received(sub.tx, sub.positions, &self.geometry, cb, self.power, self.noise_var, rng)?;
        let d = amp_decode(&y, cb, &self.zone_lsfc, self.geometry.antennas_per_ap, &self.prior, &self.decoder)?;
        Ok(SubroundResult {
            estimate: d.estimate,
            truth,
        })
    }
}

/// MD-AirComp with pre-equalization to per-zone reference antennas.
#[derive(Debug, Clone)]
pub struct MdAirCompChannel {
    pub geometry: Arc<Geometry>,
    pub codebook: Arc<CommCodebook>,
    pub prior: Vec<f64>,
    pub decoder: DecoderConfig,
    pub p_norm: f64,
    pub noise_var: f64,
    pub fade_threshold: f64,
}

impl TypeChannel for MdAirCompChannel {
    fn deliver(&self, sub: &Subround<'_>, rng: &mut ChaCha8Rng) -> Result<SubroundResult> {
        let cb = &self.codebook;
        let sig = synthesize_reference(sub.tx, sub.positions, &self.geometry, cb, self.p_norm, self.noise_var, self.fade_threshold, rng)?;
        let sent = SubroundTransmission {
            sends: sub.tx.sends.iter().zip(&sig.transmitted).filter(|(_, t)| **t).map(|(s, _)| *s).collect(),
        };
        let truth = TypeEstimate::from_multiplicities(&sent.multiplicities(cb.zones, cb.per_zone), cb.zones, cb.per_zone);
        let d = mdaircomp_decode(&sig, cb, &self.prior, &self.decoder)?;
        Ok(SubroundResult {
            estimate: d.estimate,
            truth,
        })
    }
}

/// Per-round log line.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub num_active: usize,
    pub num_candidates: usize,
    pub num_selected: usize,
    #[cfg_attr(feature = "serde", serde(rename = "L_hat"))]
    pub l_hat: usize,
    /// Threshold broadcast in this round.
    pub theta: f64,
    /// NaN when types are not transmitted.
    pub mean_tv_type_error: f64,
    /// Filled in by the caller; the core has no clock.
    pub wall_time_s: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub decode_failures: usize,
}

#[cfg(feature = "parallel")]
fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

struct ClientOutput {
    id: usize,
    delta: Vec<f64>,
}

/// Mutable state of a run.
pub struct Simulation<'a> {
    cfg: ScenarioConfig,
    mlp: Mlp,
    data: &'a FederatedData,
    params: ModelParams,
    theta: ThresholdState,
    client_error: Vec<Option<Vec<f64>>>,
    server_error: Vec<f64>,
    codebook: Option<QuantCodebook>,
    geometry: Arc<Geometry>,
    comm: Option<Arc<CommCodebook>>,
    positions: Vec<Position>,
    zones: Vec<usize>,
    channel: Box<dyn TypeChannel + 'a>,
    round: usize,
}

impl core::fmt::Debug for Simulation<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Simulation")
            .field("scenario", &self.cfg.scenario)
            .field("round", &self.round)
            .field("theta", &self.theta.theta)
            .finish_non_exhaustive()
    }
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &ScenarioConfig, data: &'a FederatedData) -> Result<Self> {
        cfg.validate()?;
        if data.shards.len() != cfg.selection.num_clients {
            return Err(Error::dim("client shards", cfg.selection.num_clients, data.shards.len()));
        }
        let mlp = Mlp::new(cfg.model.clone())?;
        if data.train.dim() != cfg.model.input_dim {
            return Err(Error::config("model.input_dim", "does not match the dataset"));
        }
        let params = ModelParams::init(&cfg.model, &mut stream(cfg.seed, Stream::ModelInit, 0, 0));
        let geometry = Arc::new(Geometry::build(&cfg.channel));
        let positions = geometry.place_clients(cfg.selection.num_clients, &mut stream(cfg.seed, Stream::Placement, 0, 0));
        let zones = positions.iter().map(|&p| geometry.zone_of(p)).collect();
        let m = cfg.quant.codewords();
        let u = geometry.num_zones();
        let noise_var = calibrate_noise(cfg.channel.snr_rx_db, cfg.channel.tx_power, &geometry);
        let prior = truncated_poisson(cfg.selection.target as f64 / (u * m) as f64, cfg.decoder.k_max)?;

        let mut comm = None;
        let channel: Box<dyn TypeChannel + 'a> = match cfg.scenario {
            Scenario::Perfect | Scenario::PerfectQuant => Box::new(ExactTypes { zones: u, per_zone: m }),
            Scenario::Tuma | Scenario::Mdaircomp => {
                let cb = Arc::new(CommCodebook::generate(
                    cfg.channel.blocklength,
                    u,
                    m,
                    &mut stream(cfg.seed, Stream::CommCodebook, 0, 0),
                ));
                comm = Some(cb.clone());
                if cfg.scenario == Scenario::Tuma {
                    Box::new(TumaChannel {
                        geometry: geometry.clone(),
                        codebook: cb,
                        zone_lsfc: cfg.decoder.zone_profiles(&geometry),
                        prior,
                        decoder: cfg.decoder.clone(),
                        power: cfg.channel.tx_power,
                        noise_var,
                    })
                } else {
                    Box::new(MdAirCompChannel {
                        geometry: geometry.clone(),
                        codebook: cb,
                        prior,
                        decoder: cfg.decoder.clone(),
                        p_norm: power_normalization(cfg.channel.snr_rx_db, noise_var, cfg.channel.blocklength, u, cfg.selection.target),
                        noise_var,
                        fade_threshold: cfg.mdaircomp.fade_threshold,
                    })
                }
            }
        };
        Ok(Self {
            server_error: vec![0.0; params.len()],
            client_error: vec![None; cfg.selection.num_clients],
            theta: ThresholdState::new(cfg.selection.theta_init),
            cfg: cfg.clone(),
            mlp,
            data,
            params,
            codebook: None,
            geometry,
            comm,
            positions,
            zones,
            channel,
            round: 0,
        })
    }

    /// Replaces the physical layer, e.g. with a test stub.
    pub fn with_channel(mut self, channel: Box<dyn TypeChannel + 'a>) -> Self {
        self.channel = channel;
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn theta(&self) -> f64 {
        self.theta.theta
    }

    /// Number of completed rounds.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn client_positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn comm_codebook(&self) -> Option<&CommCodebook> {
        self.comm.as_deref()
    }

    /// Quantization codebook used in the last round.
    pub fn quant_codebook(&self) -> Option<&QuantCodebook> {
        self.codebook.as_ref()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.round + 1;
        self.step(t).map_err(|e| Error::Round {
            round: t,
            source: Box::new(e),
        })
    }

    fn losses(&self, ids: &[usize]) -> Result<Vec<(usize, f64)>> {
        map_indexed(ids.len(), |i| {
            let k = ids[i];
            self.mlp.evaluate(&self.params, self.data.shard(k)).map(|(l, _)| (k, l))
        })
        .into_iter()
        .collect()
    }

    fn select(&self, t: usize) -> Result<(usize, usize, Vec<usize>)> {
        let sc = &self.cfg.selection;
        let seed = self.cfg.seed;
        let t64 = t as u64;
        let active = selection::activate(sc.num_clients, sc.activation_prob, &mut stream(seed, Stream::Activation, t64, 0));
        let has_data = |k: &usize| !self.data.shards[*k].is_empty();
        let (candidates, selected) = match sc.strategy {
            Strategy::Random => {
                let chosen = selection::random_select(&active, sc.target, sc.activation_prob, sc.num_clients, &mut stream(seed, Stream::RandomSelect, t64, 0));
                (active.len(), chosen.into_iter().filter(has_data).collect())
            }
            Strategy::Poc | Strategy::SelfSelect => {
                let cand: Vec<usize> = selection::candidate_gate(&active, sc.candidates, sc.activation_prob, sc.num_clients, &mut stream(seed, Stream::CandidateGate, t64, 0))?
                    .into_iter()
                    .filter(has_data)
                    .collect();
                let losses = self.losses(&cand)?;
                let chosen = if sc.strategy == Strategy::Poc {
                    selection::poc_select(&losses, sc.target)
                } else {
                    let mut rng = stream(seed, Stream::SelfSelect, t64, 0);
                    losses
                        .iter()
                        .filter(|(_, l)| selection::self_select(*l, self.theta.theta, sc.steepness, &mut rng))
                        .map(|(k, _)| *k)
                        .collect()
                };
                (cand.len(), chosen)
            }
        };
        Ok((active.len(), candidates, selected))
    }

    fn step(&mut self, t: usize) -> Result<RoundRecord> {
        let seed = self.cfg.seed;
        let t64 = t as u64;
        let theta_round = self.theta.theta;
        let (num_active, num_candidates, selected) = self.select(t)?;

        let outputs: Vec<ClientOutput> = map_indexed(selected.len(), |i| {
            let k = selected[i];
            let mut rng = stream(seed, Stream::LocalTrain, t64, k as u64);
            let trained = self.mlp.local_train(&self.params, self.data.shard(k), &self.cfg.train, &mut rng)?;
            Ok(ClientOutput {
                id: k,
                delta: compute_update(&trained, &self.params)?,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;

        let eta_g = self.cfg.global_lr;
        let (l_hat, tv, failures) = if self.cfg.scenario == Scenario::Perfect {
            let deltas: Vec<Vec<f64>> = outputs.into_iter().map(|o| o.delta).collect();
            self.params = aggregate_perfect(&self.params, &deltas, eta_g)?;
            (deltas.len(), f64::NAN, 0)
        } else {
            self.quantized_round(t, outputs)?
        };

        if self.cfg.selection.strategy == Strategy::SelfSelect {
            self.theta.update(l_hat, self.cfg.selection.target, self.cfg.selection.step);
        }
        let (test_loss, test_accuracy) = self.mlp.evaluate(&self.params, self.data.test.view())?;
        self.round = t;
        Ok(RoundRecord {
            round: t,
            test_accuracy,
            test_loss,
            num_active,
            num_candidates,
            num_selected: selected.len(),
            l_hat,
            theta: theta_round,
            mean_tv_type_error: tv,
            wall_time_s: 0.0,
            decode_failures: failures,
        })
    }

    fn quantized_round(&mut self, t: usize, outputs: Vec<ClientOutput>) -> Result<(usize, f64, usize)> {
        let seed = self.cfg.seed;
        let t64 = t as u64;
        let w = self.params.len();
        let refresh = server_codebook_round(
            &self.mlp,
            &self.params,
            self.data.server.view(),
            &self.server_error,
            &self.cfg.train,
            &self.cfg.quant,
            &mut stream(seed, Stream::ServerTrain, t64, 0),
        )?;
        self.server_error = refresh.server_error;
        let cb = refresh.codebook;

        let mut indices = Vec::with_capacity(outputs.len());
        for o in &outputs {
            let e = self.client_error[o.id].take().unwrap_or_else(|| vec![0.0; w]);
            let q = quantize_update(&o.delta, &e, &cb)?;
            self.client_error[o.id] = Some(q.new_error);
            indices.push(q.indices);
        }

        let q = cb.dim();
        let d_total = num_subvectors(w, q);
        let positions: Vec<Position> = outputs.iter().map(|o| self.positions[o.id]).collect();
        let results: Vec<Option<Result<SubroundResult>>> = if outputs.is_empty() {
            vec![None; 0]
        } else {
            let channel = &*self.channel;
            map_indexed(d_total, |d| {
                let tx = SubroundTransmission {
                    sends: outputs.iter().zip(&indices).map(|(o, idx)| (self.zones[o.id], idx[d] as usize)).collect(),
                };
                let sub = Subround {
                    round: t,
                    index: d,
                    tx: &tx,
                    positions: &positions,
                };
                Some(channel.deliver(&sub, &mut stream(seed, Stream::Channel, t64, d as u64)))
            })
        };

        let mut counts = Vec::with_capacity(d_total);
        let mut tv_sum = 0.0;
        let mut failures = 0;
        for (d, res) in results.into_iter().enumerate() {
            match res {
                Some(Ok(r)) => {
                    let end = ((d + 1) * q).min(w);
                    aggregate_from_type(&mut self.params.0[d * q..end], &r.estimate.types, &cb, self.cfg.global_lr)?;
                    tv_sum += tv_distance(&r.estimate.types, &r.truth.types);
                    counts.push(r.estimate.count);
                }
                Some(Err(Error::Numerical { .. })) => failures += 1,
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        self.codebook = Some(cb);
        let tv = if counts.is_empty() { f64::NAN } else { tv_sum / counts.len() as f64 };
        Ok((estimate_round_participants(&counts), tv, failures))
    }
}

/// Runs `cfg.rounds` rounds, passing every record to `on_record` as it completes.
pub fn run_training<F: FnMut(&RoundRecord)>(cfg: &ScenarioConfig, data: &FederatedData, mut on_record: F) -> Result<(Vec<RoundRecord>, ModelParams)> {
    let mut sim = Simulation::new(cfg, data)?;
    let mut records = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let r = sim.run_round()?;
        on_record(&r);
        records.push(r);
    }
    Ok((records, sim.params.clone()))
}
