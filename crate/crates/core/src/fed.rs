//! Synchronous federated rounds: client sampling, local training and
//! sample-weighted parameter averaging.
//!
//! Each round the server draws a subset of clients, hands every selected
//! client a copy of the global parameters and averages whatever comes back,
//! weighting client `k` by `N_k / N` over the clients that succeeded. Updates
//! are summed in ascending client-id order, so results do not depend on
//! whether clients ran sequentially or in parallel.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{local_train, ClassifierConfig};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::gan::{client_update, GanConfig};
use crate::nn::{ByteCursor, ParameterVector};
use crate::rng::{derive_seed, rng_from_seed, tag, SimRng};

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdateMsg {
    pub client_id: usize,
    pub round: u64,
    pub params: ParameterVector,
    pub n_k: usize,
    pub loss: f64,
}

impl ClientUpdateMsg {
    /// Header of `client_id`, `n_k`, `round` (little-endian u64) followed by
    /// the parameter vector encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.params.len());
        out.extend_from_slice(&(self.client_id as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_k as u64).to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        self.params.write_bytes(&mut out);
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). The loss is not part of the
    /// wire format and decodes as NaN.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = ByteCursor { bytes, pos: 0 };
        let client_id = cursor.u64()? as usize;
        let n_k = cursor.u64()? as usize;
        let round = cursor.u64()?;
        let (params, used) = ParameterVector::read_bytes(&bytes[cursor.pos..])?;
        if cursor.pos + used != bytes.len() {
            return Err(Error::Format("trailing bytes after client update".into()));
        }
        if n_k == 0 {
            return Err(Error::Format("client update with zero samples".into()));
        }
        Ok(ClientUpdateMsg {
            client_id,
            round,
            params,
            n_k,
            loss: f64::NAN,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub selected: Vec<usize>,
    /// Selected clients whose local training failed.
    pub dropped: Vec<usize>,
    pub mean_client_loss: f64,
    pub eval_accuracy: Option<f64>,
    /// Seed of the round's client-selection stream.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModelState {
    pub round: u64,
    pub theta: ParameterVector,
    pub history: Vec<RoundRecord>,
}

impl GlobalModelState {
    pub fn new(theta: ParameterVector) -> Self {
        GlobalModelState {
            round: 0,
            theta,
            history: Vec::new(),
        }
    }
}

/// Number of clients drawn per round: `max(1, round(c_frac * K))`.
pub fn subset_size(clients: usize, c_frac: f64) -> usize {
    ((c_frac * clients as f64).round() as usize).clamp(1, clients.max(1))
}

/// Uniform sample without replacement, returned in ascending order.
pub fn select_clients<R: Rng + ?Sized>(
    clients: usize,
    c_frac: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if clients == 0 {
        return Err(Error::parameter("need at least one client"));
    }
    if !(c_frac > 0.0 && c_frac <= 1.0) {
        return Err(Error::parameter(format!(
            "c_frac must lie in (0, 1], got {c_frac}"
        )));
    }
    let mut ids = sample_indices(rng, clients, subset_size(clients, c_frac)).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `sum_k (N_k / N) * theta_k` over the given updates.
pub fn fedavg_aggregate(updates: &[ClientUpdateMsg]) -> Result<ParameterVector> {
    let first = updates
        .first()
        .ok_or_else(|| Error::protocol("cannot aggregate zero client updates"))?;
    let total: usize = updates.iter().map(|u| u.n_k).sum();
    if total == 0 {
        return Err(Error::protocol("client updates carry no samples"));
    }
    let mut sorted: Vec<&ClientUpdateMsg> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let mut acc = first.params.zeros_like();
    for u in sorted {
        acc.add_scaled(&u.params, u.n_k as f64 / total as f64)?;
    }
    Ok(acc)
}

/// A participant in federated training.
pub trait FederatedClient: Send {
    fn id(&self) -> usize;

    fn num_samples(&self) -> usize;

    /// Trains on local data starting from `global` and returns new parameters
    /// and the mean local loss.
    fn local_update(
        &mut self,
        global: &ParameterVector,
        rng: &mut SimRng,
    ) -> Result<(ParameterVector, f64)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: u64,
    pub c_frac: f64,
    /// Root of every random stream this federation draws from.
    pub seed: u64,
    /// Run selected clients on the rayon pool.
    pub parallel: bool,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_frac > 0.0 && self.c_frac <= 1.0) {
            return Err(Error::parameter(format!(
                "c_frac must lie in (0, 1], got {}",
                self.c_frac
            )));
        }
        Ok(())
    }
}

/// Evaluates the global model after aggregation.
pub type Evaluator<'a> = dyn Fn(&ParameterVector) -> Result<f64> + Sync + 'a;

/// Broadcast, local training, aggregation. Appends a [`RoundRecord`] and
/// advances the round counter.
pub fn run_round<C: FederatedClient>(
    mut state: GlobalModelState,
    clients: &mut [C],
    cfg: &FedConfig,
    eval: Option<&Evaluator<'_>>,
) -> Result<GlobalModelState> {
    if clients.is_empty() {
        return Err(Error::protocol("client registry is empty"));
    }
    cfg.validate()?;
    let round = state.round;
    let select_seed = derive_seed(cfg.seed, &[tag::SELECT, round]);
    let picks = select_clients(clients.len(), cfg.c_frac, &mut rng_from_seed(select_seed))?;

    let mut is_selected = vec![false; clients.len()];
    for &p in &picks {
        is_selected[p] = true;
    }
    let global = &state.theta;
    let train = |(slot, client): (usize, &mut C)| {
        let id = client.id();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[tag::CLIENT, id as u64, round]));
        let result = client
            .local_update(global, &mut rng)
            .and_then(|(params, loss)| {
                params.ensure_same_layout(global)?;
                Ok(ClientUpdateMsg {
                    client_id: id,
                    round,
                    params,
                    n_k: client.num_samples(),
                    loss,
                })
            });
        (slot, id, result)
    };
    let outcomes: Vec<(usize, usize, Result<ClientUpdateMsg>)> = if cfg.parallel {
        clients
            .par_iter_mut()
            .enumerate()
            .filter(|(slot, _)| is_selected[*slot])
            .map(train)
            .collect()
    } else {
        clients
            .iter_mut()
            .enumerate()
            .filter(|(slot, _)| is_selected[*slot])
            .map(train)
            .collect()
    };

    let mut updates = Vec::with_capacity(outcomes.len());
    let mut dropped = Vec::new();
    let mut selected = Vec::with_capacity(outcomes.len());
    for (_, id, result) in outcomes {
        selected.push(id);
        match result {
            Ok(msg) if msg.n_k > 0 => updates.push(msg),
            _ => dropped.push(id),
        }
    }
    if updates.is_empty() {
        return Err(Error::protocol(format!(
            "round {round}: every selected client failed"
        )));
    }
    updates.sort_by_key(|u| u.client_id);
    let theta = fedavg_aggregate(&updates)?;
    let mean_client_loss = updates.iter().map(|u| u.loss).sum::<f64>() / updates.len() as f64;
    let eval_accuracy = eval.map(|f| f(&theta)).transpose()?;

    state.theta = theta;
    state.history.push(RoundRecord {
        round,
        selected,
        dropped,
        mean_client_loss,
        eval_accuracy,
        seed: select_seed,
    });
    state.round += 1;
    Ok(state)
}

/// Runs `cfg.rounds` rounds from `state`.
pub fn run_training<C: FederatedClient>(
    state: GlobalModelState,
    clients: &mut [C],
    cfg: &FedConfig,
    eval: Option<&Evaluator<'_>>,
) -> Result<GlobalModelState> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::protocol("client registry is empty"));
    }
    (0..cfg.rounds).try_fold(state, |s, _| run_round(s, clients, cfg, eval))
}

/// Federated classifier participant running local SGD epochs.
#[derive(Debug, Clone)]
pub struct ClassifierClient {
    pub shard: ClientShard,
    pub cfg: ClassifierConfig,
}

impl FederatedClient for ClassifierClient {
    fn id(&self) -> usize {
        self.shard.client_id
    }

    fn num_samples(&self) -> usize {
        self.shard.n_k()
    }

    fn local_update(
        &mut self,
        global: &ParameterVector,
        rng: &mut SimRng,
    ) -> Result<(ParameterVector, f64)> {
        let out = local_train(global, &self.shard, &self.cfg, rng)?;
        Ok((out.params, out.mean_loss))
    }
}

/// Federated GAN participant. The critic stays on the client between rounds;
/// only the generator is uploaded.
#[derive(Debug, Clone)]
pub struct GanClient {
    pub shard: ClientShard,
    pub cfg: GanConfig,
    pub omega: ParameterVector,
}

impl FederatedClient for GanClient {
    fn id(&self) -> usize {
        self.shard.client_id
    }

    fn num_samples(&self) -> usize {
        self.shard.n_k()
    }

    fn local_update(
        &mut self,
        global: &ParameterVector,
        rng: &mut SimRng,
    ) -> Result<(ParameterVector, f64)> {
        let out = client_update(global, &self.omega, &self.shard, &self.cfg, rng)?;
        self.omega = out.omega;
        Ok((out.theta, out.stats.mean_critic_loss()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn msg(id: usize, n_k: usize, values: &[f64]) -> ClientUpdateMsg {
        ClientUpdateMsg {
            client_id: id,
            round: 0,
            params: ParameterVector::from_values(values.to_vec()),
            n_k,
            loss: 0.0,
        }
    }

    #[test]
    fn selection_sizes() {
        let ids = select_clients(100, 0.1, &mut rng_from_seed(1)).unwrap();
        assert_eq!(ids.len(), 10);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(
            select_clients(7, 1.0, &mut rng_from_seed(1)).unwrap(),
            (0..7).collect::<Vec<_>>()
        );
        assert_eq!(
            select_clients(5, 0.01, &mut rng_from_seed(1))
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            select_clients(100, 0.1, &mut rng_from_seed(4)).unwrap(),
            select_clients(100, 0.1, &mut rng_from_seed(4)).unwrap()
        );
        assert!(select_clients(10, 1.5, &mut rng_from_seed(1)).is_err());
        assert!(select_clients(10, 0.0, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn fedavg_cases() {
        let avg = fedavg_aggregate(&[msg(0, 5, &[1.0, 3.0]), msg(1, 5, &[3.0, 5.0])]).unwrap();
        assert_eq!(avg.values(), &[2.0, 4.0]);
        let avg = fedavg_aggregate(&[msg(0, 1, &[0.0]), msg(1, 3, &[4.0])]).unwrap();
        assert_eq!(avg.values(), &[3.0]);
        let single = msg(3, 7, &[0.25, -1.5]);
        assert_eq!(
            fedavg_aggregate(std::slice::from_ref(&single)).unwrap(),
            single.params
        );
        assert!(matches!(fedavg_aggregate(&[]), Err(Error::Protocol(_))));
        assert!(matches!(
            fedavg_aggregate(&[msg(0, 1, &[1.0]), msg(1, 1, &[1.0, 2.0])]),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn wire_format_round_trip() {
        let m = ClientUpdateMsg {
            round: 12,
            ..msg(4, 33, &[1.5, -2.25])
        };
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], &4u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &33u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &12u64.to_le_bytes());
        let back = ClientUpdateMsg::from_bytes(&bytes).unwrap();
        assert_eq!((back.client_id, back.n_k, back.round), (4, 33, 12));
        assert_eq!(back.params, m.params);
        assert!(ClientUpdateMsg::from_bytes(&bytes[..30]).is_err());
    }

    /// Returns its input shifted by a fixed offset, or fails on demand.
    struct Shift {
        id: usize,
        n: usize,
        offset: f64,
        fail: bool,
    }

    impl FederatedClient for Shift {
        fn id(&self) -> usize {
            self.id
        }
        fn num_samples(&self) -> usize {
            self.n
        }
        fn local_update(
            &mut self,
            global: &ParameterVector,
            _: &mut SimRng,
        ) -> Result<(ParameterVector, f64)> {
            if self.fail {
                return Err(Error::data("simulated failure"));
            }
            Ok((global.map(|v| v + self.offset), self.offset))
        }
    }

    fn registry(offsets: &[f64], fail: &[bool]) -> Vec<Shift> {
        offsets
            .iter()
            .zip(fail)
            .enumerate()
            .map(|(id, (&offset, &fail))| Shift {
                id,
                n: id + 1,
                offset,
                fail,
            })
            .collect()
    }

    fn full(rounds: u64) -> FedConfig {
        FedConfig {
            rounds,
            c_frac: 1.0,
            seed: 3,
            parallel: false,
        }
    }

    #[test]
    fn unchanged_clients_keep_global() {
        let mut clients = registry(&[0.0, 0.0, 0.0], &[false; 3]);
        let start = GlobalModelState::new(ParameterVector::from_values(vec![1.0, 2.0]));
        let s = run_round(start.clone(), &mut clients, &full(1), None).unwrap();
        assert_eq!(s.theta, start.theta);
        assert_eq!(s.round, 1);
        assert_eq!(s.history.len(), 1);
        assert_eq!(s.history[0].selected, vec![0, 1, 2]);
    }

    #[test]
    fn failed_clients_are_dropped_and_weights_renormalised() {
        let mut clients = registry(&[1.0, 10.0, 4.0], &[false, true, false]);
        let start = GlobalModelState::new(ParameterVector::from_values(vec![0.0]));
        let s = run_round(start, &mut clients, &full(1), None).unwrap();
        // weights 1/4 and 3/4 over clients 0 and 2
        assert!((s.theta.values()[0] - 3.25).abs() < 1e-15);
        assert_eq!(s.history[0].dropped, vec![1]);

        let mut all_fail = registry(&[1.0, 2.0], &[true, true]);
        let start = GlobalModelState::new(ParameterVector::from_values(vec![0.0]));
        assert!(matches!(
            run_round(start, &mut all_fail, &full(1), None),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn zero_rounds_return_initial_state() {
        let mut clients = registry(&[1.0], &[false]);
        let start = GlobalModelState::new(ParameterVector::from_values(vec![0.5]));
        assert_eq!(
            run_training(start.clone(), &mut clients, &full(0), None).unwrap(),
            start
        );
        let empty: &mut [Shift] = &mut [];
        assert!(run_training(start, empty, &full(1), None).is_err());
    }

    #[test]
    fn parallel_matches_sequential() {
        let offsets: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let cfg = FedConfig {
            rounds: 4,
            c_frac: 0.3,
            seed: 11,
            parallel: false,
        };
        let start = GlobalModelState::new(ParameterVector::from_values(vec![0.1, 0.2, 0.3]));
        let seq = run_training(
            start.clone(),
            &mut registry(&offsets, &[false; 20]),
            &cfg,
            None,
        )
        .unwrap();
        let par_cfg = FedConfig {
            parallel: true,
            ..cfg
        };
        let par =
            run_training(start, &mut registry(&offsets, &[false; 20]), &par_cfg, None).unwrap();
        assert_eq!(seq, par);
        assert!(seq.history.iter().all(|r| r.selected.len() == 6));
    }
}
