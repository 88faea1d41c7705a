use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::trace::{EventScope, Knot, StepTrace};
use super::RecordMode;

/// One accepted main jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpLogEntry {
    pub time: f64,
    pub jumper: usize,
    /// `‖ψ‖` of the main jump.
    pub amplitude: f64,
}

/// Jump-time knots of one particle: `(t, left limit, value)`.
#[derive(Debug, Clone, Default)]
pub struct PathRecord {
    pub knots: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

/// Output of a full simulation run.
#[derive(Debug, Clone)]
pub struct PathRecordSet {
    pub n: usize,
    pub d: usize,
    pub grid: Vec<f64>,
    /// Flat `N × d` positions at each grid time.
    pub grid_positions: Vec<Vec<f64>>,
    /// Per-particle knots between grid points; empty unless recording in full.
    pub paths: Vec<PathRecord>,
    pub jump_log: Vec<JumpLogEntry>,
    mode: RecordMode,
}

impl PathRecordSet {
    pub fn new(n: usize, d: usize, mode: RecordMode) -> Self {
        Self {
            n,
            d,
            grid: Vec::new(),
            grid_positions: Vec::new(),
            paths: match mode {
                RecordMode::Full => vec![PathRecord::default(); n],
                RecordMode::GridOnly => Vec::new(),
            },
            jump_log: Vec::new(),
            mode,
        }
    }

    pub fn push_grid(&mut self, t: f64, positions: &[f64]) {
        self.grid.push(t);
        self.grid_positions.push(positions.to_vec());
    }

    pub fn absorb(&mut self, trace: &StepTrace) {
        if self.mode == RecordMode::Full {
            let d = self.d;
            for e in &trace.events {
                match e.scope {
                    EventScope::One => self.paths[e.jumper].knots.push((e.time, e.pre.clone(), e.post.clone())),
                    EventScope::All => {
                        for (i, p) in self.paths.iter_mut().enumerate() {
                            p.knots.push((
                                e.time,
                                e.pre[i * d..(i + 1) * d].to_vec(),
                                e.post[i * d..(i + 1) * d].to_vec(),
                            ));
                        }
                    }
                }
            }
        }
        self.push_grid(trace.t1, &trace.end);
    }

    pub fn grid_value(&self, k: usize, i: usize) -> &[f64] {
        &self.grid_positions[k][i * self.d..(i + 1) * self.d]
    }

    pub fn final_positions(&self) -> &[f64] {
        self.grid_positions.last().map_or(&[], |v| v.as_slice())
    }

    /// All knots of particle `i` in time order: grid points and, when
    /// recorded, jump knots.
    pub fn knots(&self, i: usize) -> Vec<Knot<'_>> {
        let mut out: Vec<Knot<'_>> = self
            .grid
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let v = self.grid_value(k, i);
                Knot { t, left: v, right: v }
            })
            .collect();
        if let Some(p) = self.paths.get(i) {
            out.extend(p.knots.iter().map(|(t, l, r)| Knot {
                t: *t,
                left: l,
                right: r,
            }));
            out.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        out
    }

    pub fn write_paths_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# mfchaos-paths v1")?;
        write!(w, "t,particle")?;
        for c in 1..=self.d {
            write!(w, ",x_{c}")?;
        }
        writeln!(w)?;
        for (k, &t) in self.grid.iter().enumerate() {
            for i in 0..self.n {
                write!(w, "{t},{i}")?;
                for v in self.grid_value(k, i) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn write_jumps_csv(&self, w: impl Write) -> Result<()> {
        write_jump_log(&self.jump_log, w)
    }
}

pub fn write_jump_log(log: &[JumpLogEntry], mut w: impl Write) -> Result<()> {
    writeln!(w, "# mfchaos-jumps v1")?;
    writeln!(w, "t,jumper,abs_delta")?;
    for e in log {
        writeln!(w, "{},{},{}", e.time, e.jumper, e.amplitude)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_versioned_header_and_one_row_per_particle() {
        let mut rec = PathRecordSet::new(2, 1, RecordMode::GridOnly);
        rec.push_grid(0.0, &[1.0, 2.0]);
        rec.push_grid(0.5, &[1.5, 2.5]);
        rec.jump_log.push(JumpLogEntry {
            time: 0.25,
            jumper: 1,
            amplitude: 0.5,
        });
        let mut buf = Vec::new();
        rec.write_paths_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# mfchaos-paths v1");
        assert_eq!(lines[1], "t,particle,x_1");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[5], "0.5,1,2.5");
        let mut buf = Vec::new();
        rec.write_jumps_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# mfchaos-jumps v1\nt,jumper,abs_delta\n0.25,1,0.5\n"
        );
    }
}
