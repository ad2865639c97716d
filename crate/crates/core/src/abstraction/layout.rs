use crate::agent_model::{AgentSpec, AgentState, BeliefId, Valuation};
use crate::env_model::{CounterBank, CounterLayout};
use crate::reasoner::ClosedState;

/// Fixed-width byte encoding of [`ClosedState`]s and their mapping to model
/// variables.
///
/// Packed layout: belief bits, event bits (both `⌈n/8⌉` bytes), one byte per
/// execution slot, one byte per counter.
#[derive(Debug, Clone)]
pub struct StateLayout {
    atoms: usize,
    bit_bytes: usize,
    slots: usize,
    counters: usize,
    plan_count: usize,
    counter_atoms: Vec<BeliefId>,
    vars: Vec<String>,
}

impl StateLayout {
    pub fn new(spec: &AgentSpec, counters: &CounterLayout) -> Self {
        let atoms = spec.beliefs.len();
        let mut vars: Vec<String> = spec.beliefs.iter().map(|b| b.name.clone()).collect();
        for slot in 0..spec.slot_count() {
            vars.push(spec.slot_name(slot));
        }
        for b in &spec.beliefs {
            vars.push(format!("ev_{}", b.name));
        }
        let mut seen = std::collections::BTreeMap::<String, usize>::new();
        for atom in &counters.atoms {
            let base = format!("timer_{}", spec.belief(*atom).name);
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            vars.push(if *n == 1 { base } else { format!("{base}_{n}") });
        }
        StateLayout {
            atoms,
            bit_bytes: atoms.div_ceil(8),
            slots: spec.slot_count(),
            counters: counters.len(),
            plan_count: spec.plans.len(),
            counter_atoms: counters.atoms.clone(),
            vars,
        }
    }

    pub fn width(&self) -> usize {
        2 * self.bit_bytes + self.slots + self.counters
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn plan_count(&self) -> usize {
        self.plan_count
    }

    pub fn counter_atoms(&self) -> &[BeliefId] {
        &self.counter_atoms
    }

    fn put_bits(out: &mut [u8], v: Valuation) {
        let bits = v.bits().to_le_bytes();
        out.copy_from_slice(&bits[..out.len()]);
    }

    fn get_bits(src: &[u8]) -> Valuation {
        let mut bits = [0u8; 16];
        bits[..src.len()].copy_from_slice(src);
        Valuation::from_bits(u128::from_le_bytes(bits))
    }

    pub fn pack(&self, s: &ClosedState) -> Box<[u8]> {
        let mut out = vec![0u8; self.width()].into_boxed_slice();
        let b = self.bit_bytes;
        Self::put_bits(&mut out[..b], s.agent.beliefs);
        Self::put_bits(&mut out[b..2 * b], s.agent.events);
        out[2 * b..2 * b + self.slots].copy_from_slice(&s.agent.lambdas);
        out[2 * b + self.slots..].copy_from_slice(&s.counters.0);
        out
    }

    pub fn unpack(&self, packed: &[u8]) -> ClosedState {
        let b = self.bit_bytes;
        ClosedState {
            agent: AgentState {
                beliefs: Self::get_bits(&packed[..b]),
                events: Self::get_bits(&packed[b..2 * b]),
                lambdas: packed[2 * b..2 * b + self.slots].to_vec(),
            },
            counters: CounterBank(packed[2 * b + self.slots..].to_vec()),
        }
    }

    /// Model-variable valuation: beliefs, slot indices, event bits, counters.
    pub fn valuation(&self, s: &ClosedState) -> Vec<i32> {
        let mut out = Vec::with_capacity(self.vars.len());
        for i in 0..self.atoms {
            out.push(i32::from(s.agent.beliefs.get(BeliefId(i as u16))));
        }
        out.extend(s.agent.lambdas.iter().map(|l| i32::from(*l)));
        for i in 0..self.atoms {
            out.push(i32::from(s.agent.events.get(BeliefId(i as u16))));
        }
        out.extend(s.counters.0.iter().map(|c| i32::from(*c)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_model::{BeliefAtom, BeliefKind};

    #[test]
    fn pack_round_trip() {
        let spec = AgentSpec {
            beliefs: (0..11)
                .map(|i| BeliefAtom {
                    name: format!("b{i}"),
                    kind: BeliefKind::Mental,
                    source: String::new(),
                })
                .collect(),
            ..AgentSpec::default()
        };
        let layout = StateLayout::new(&spec, &CounterLayout::new(&spec));
        let s = ClosedState {
            agent: AgentState {
                beliefs: Valuation::from_bits(0b101_0000_0001),
                events: Valuation::from_bits(0b100_0000_0000),
                lambdas: vec![],
            },
            counters: CounterBank(vec![]),
        };
        let p = layout.pack(&s);
        assert_eq!(p.len(), 4);
        assert_eq!(layout.unpack(&p), s);
        let v = layout.valuation(&s);
        assert_eq!(v.len(), 22);
        assert_eq!(v[0], 1);
        assert_eq!(v[10], 1);
        assert_eq!(v[21], 1);
    }
}
