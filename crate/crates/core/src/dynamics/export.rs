//! Line-delimited JSON trajectory records, one state per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::LatentTrajectory;
use crate::error::{Error, Result};
use crate::types::LatentState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Source sequence, when several trajectories share one file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    pub t: usize,
    pub state: Vec<f64>,
    /// Control applied at this state; absent on the last line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Vec<f64>>,
    #[serde(default)]
    pub barrier_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composed: Option<f64>,
}

pub fn write_trajectory_jsonl<W: Write>(traj: &LatentTrajectory, out: W) -> Result<()> {
    write_trajectory_records(traj, None, out)
}

/// Like [`write_trajectory_jsonl`], tagging every line with `sequence`.
pub fn write_trajectory_records<W: Write>(traj: &LatentTrajectory, sequence: Option<&str>, mut out: W) -> Result<()> {
    for (t, state) in traj.states.iter().enumerate() {
        let rec = TrajectoryRecord {
            sequence: sequence.map(str::to_string),
            t,
            state: state.as_slice().to_vec(),
            control: traj.controls.get(t).map(|u| u.as_slice().to_vec()),
            barrier_values: traj.barrier_trace[t].clone(),
            composed: Some(traj.composed_trace[t]),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// States of a single-trajectory file, ordered by `t`. Only `t` and `state`
/// are required on each line; blank lines are skipped.
pub fn read_trajectory_jsonl<R: BufRead>(input: R) -> Result<Vec<LatentState>> {
    let mut seqs = read_trajectory_sequences(input)?;
    match seqs.len() {
        0 => Ok(Vec::new()),
        1 => Ok(seqs.remove(0).1),
        n => Err(Error::InvalidConfig(format!(
            "expected one trajectory, found {n} sequences"
        ))),
    }
}

/// Trajectories of a records file grouped by `sequence` (in order of first
/// appearance), each ordered by `t`.
pub fn read_trajectory_sequences<R: BufRead>(input: R) -> Result<Vec<(Option<String>, Vec<LatentState>)>> {
    let mut recs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| crate::dataio::DumpError::Json {
            line: i + 1,
            reason: e.to_string(),
        })?;
        recs.push(rec);
    }
    let mut groups: Vec<(Option<String>, Vec<TrajectoryRecord>)> = Vec::new();
    for rec in recs {
        match groups.iter_mut().find(|(id, _)| *id == rec.sequence) {
            Some((_, g)) => g.push(rec),
            None => groups.push((rec.sequence.clone(), vec![rec])),
        }
    }
    let mut dim = None;
    groups
        .into_iter()
        .map(|(id, mut g)| {
            g.sort_by_key(|r| r.t);
            if g.windows(2).any(|w| w[0].t == w[1].t) {
                return Err(Error::InvalidConfig("duplicate step index in trajectory".into()));
            }
            let states = g
                .into_iter()
                .map(|r| {
                    let s = LatentState::new(r.state)?;
                    s.check_dim(*dim.get_or_insert(s.dim()))?;
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((id, states))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{Barrier, BarrierBank};
    use crate::dynamics::{rollout, NominalDynamics};
    use crate::types::SteeringConfig;

    #[test]
    fn round_trip_states() {
        let bank = BarrierBank::new(vec![Barrier::half_space(vec![0.0, 1.0], 0.0)]).unwrap();
        let nominal = NominalDynamics::DriftToTarget {
            target: vec![1.0, -1.0],
            gain: 0.7,
        };
        let traj = rollout(
            &LatentState::new(vec![0.1, 0.4]).unwrap(),
            &nominal,
            &bank,
            &SteeringConfig::default(),
            7,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&traj, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 8);
        let states = read_trajectory_jsonl(buf.as_slice()).unwrap();
        assert_eq!(states, traj.states);
    }

    #[test]
    fn minimal_lines_are_accepted() {
        let text = "{\"t\":1,\"state\":[1.0,2.0]}\n\n{\"t\":0,\"state\":[0.0,2.0]}\n";
        let states = read_trajectory_jsonl(text.as_bytes()).unwrap();
        assert_eq!(states[0].as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = "{\"t\":0,\"state\":[0.0]}\nnot json\n";
        let err = read_trajectory_jsonl(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains('2'), "{err}");
    }
}
