//! Executes a scenario on the simulator.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::client::Client;
use crate::consensus::Sequencer;
use crate::fragment::{FragmentedObject, Manifest};
use crate::history::{ExecutionLog, Outcome};
use crate::netsim::Sim;
use crate::scenario::{Action, Scenario};
use crate::trace::{self, Span};
use crate::types::ScopeId;
use crate::verify::{self, Report};

pub struct Run {
    pub log: ExecutionLog,
    pub spans: Vec<Span>,
}

impl Run {
    pub fn outcome(&self) -> &Outcome {
        self.log.outcome.as_ref().expect("set by the runner")
    }

    pub fn ops_jsonl(&self) -> String {
        self.log.to_jsonl()
    }

    pub fn trace_jsonl(&self) -> String {
        trace::to_jsonl(&self.spans)
    }

    pub fn verify(&self) -> Report {
        verify::verify(&self.log)
    }
}

pub fn run(scenario: &Scenario) -> Run {
    let mut sim = Sim::new(scenario.net, scenario.servers.iter().copied(), Box::new(Sequencer::new()));
    let c0 = scenario.initial_config().clone();
    let files: BTreeMap<String, Manifest> = scenario
        .files
        .iter()
        .map(|f| (f.name.clone(), Rc::new(RefCell::new(FragmentedObject::with_blocks(&f.name, f.block_size, f.blocks)))))
        .collect();

    for spec in &scenario.clients {
        let mut client = Client::new(sim.ctx(spec.id), c0.clone(), scenario.features);
        let ops = spec.ops.clone();
        let configs = scenario.configs.clone();
        let files = files.clone();
        sim.spawn(spec.id, async move {
            for op in ops {
                client.ctx().sleep_until(op.at).await;
                // Failures are recorded on the operation itself.
                let _ = match op.action {
                    Action::Read { object } => client.read(&ScopeId::from(&object), &object).await.map(drop),
                    Action::Write { object, value } => {
                        client.write(&ScopeId::from(&object), &object, value).await.map(drop)
                    }
                    Action::Reconfig { object, config } => client
                        .reconfig(&ScopeId::from(&object), std::slice::from_ref(&object), configs[&config].clone())
                        .await
                        .map(drop),
                    Action::FileRead { file } => client.file_read(&files[&file]).await.map(drop),
                    Action::FileWrite { file, value } => client.file_write(&files[&file], &value).await.map(drop),
                    Action::FileReconfig { file, config } => {
                        client.file_reconfig(&files[&file], configs[&config].clone()).await.map(drop)
                    }
                };
            }
        });
    }
    for &(node, at) in &scenario.crashes {
        sim.schedule_crash(node, at);
    }
    let outcome = sim.run();
    drop(files);
    let (log, spans) = sim.finish(outcome);
    Run { log, spans }
}
