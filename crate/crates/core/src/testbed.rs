//! Wires the IMS core, the exam application server and UEs into one
//! simulation.

use std::cell::RefCell;
use std::path::PathBuf;
use std::rc::Rc;

use thiserror::Error;

use crate::exam::AppServer;
use crate::exam::{
    Command, ExamError, ExamService, FileSinks, FixtureError, Installed, Journal, Outcome,
    University, UserId,
};
use crate::ims::{
    icscf_addr, pcscf_addr, scscf_addr, Hss, HssError, Icscf, IcscfRouter, ImsCore, Pcscf,
    PcscfRouter, Proxy, Scscf, ScscfRouter, ServiceTrigger, SharedCore, SubscriberProfile,
    TriggerRule, DEFAULT_REALM,
};
use crate::netsim::{addr, mix64, ConfigError, NodeAddress, SimConfig, SimError, Simulation};
use crate::sip::SipUri;
use crate::ue::{UeAgent, UeIdentity};

pub const AS_NODE: &str = "momex-as";
/// User part of the exam service URI that triggers routing to the AS.
pub const SERVICE_USER: &str = "exam";

#[derive(Debug, Clone, Default)]
pub struct TestbedConfig {
    pub sim: SimConfig,
    /// Directory for sms.out and email.out; notifications stay in memory
    /// when unset.
    pub sink_dir: Option<PathBuf>,
    pub journal: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Hss(#[from] HssError),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
}

pub struct Testbed {
    pub sim: Simulation,
    pub core: SharedCore,
    pub as_addr: NodeAddress,
    pub installed: Installed,
}

/// Seed of the exam service for a given simulation seed.
pub fn service_seed(sim_seed: u64) -> u64 {
    mix64(sim_seed ^ 0x6d6f_6d65_785f_6173)
}

pub fn service_uri() -> SipUri {
    SipUri::new(Some(SERVICE_USER), DEFAULT_REALM)
}

impl Testbed {
    /// Boots the core and the AS with an empty exam service.
    pub fn boot(config: &TestbedConfig) -> Result<Testbed, TestbedError> {
        Self::boot_with(config, None, &[])
    }

    /// Boots, installs `university` into the exam service and provisions any
    /// extra HSS-only subscribers.
    pub fn boot_with(
        config: &TestbedConfig,
        university: Option<&University>,
        subscribers: &[SubscriberProfile],
    ) -> Result<Testbed, TestbedError> {
        let mut sim = Simulation::new(config.sim)?;
        let as_addr = addr(AS_NODE);

        let mut ims = ImsCore::new(Hss::default());
        ims.default_triggers.push(ServiceTrigger {
            rule: TriggerRule {
                methods: Vec::new(),
                uri_user: Some(SERVICE_USER.into()),
                uri_host: None,
            },
            target: as_addr.clone(),
        });
        for p in subscribers {
            ims.hss.provision(p.clone())?;
        }

        let mut service = ExamService::new(service_seed(config.sim.seed));
        let installed = match university {
            Some(u) => u.install(&mut service, &mut ims)?,
            None => Installed::default(),
        };
        let core: SharedCore = Rc::new(RefCell::new(ims));

        let pcscf: Pcscf = Proxy::new(PcscfRouter::new(icscf_addr(), scscf_addr()));
        let icscf: Icscf = Proxy::new(IcscfRouter {
            core: core.clone(),
            scscf: scscf_addr(),
        });
        let scscf: Scscf = Proxy::new(ScscfRouter {
            core: core.clone(),
            app_servers: vec![as_addr.clone()],
        });
        sim.register_node(pcscf_addr(), Box::new(pcscf))?;
        sim.register_node(icscf_addr(), Box::new(icscf))?;
        sim.register_node(scscf_addr(), Box::new(scscf))?;

        let mut app = AppServer::new(
            service,
            core.clone(),
            scscf_addr(),
            SipUri::new(Some(AS_NODE), DEFAULT_REALM),
        );
        if let Some(dir) = &config.sink_dir {
            std::fs::create_dir_all(dir)?;
            app.add_sink(Box::new(FileSinks::new(dir)));
        }
        if let Some(path) = &config.journal {
            app.set_journal(Journal::open(path)?);
        }
        sim.register_node(as_addr.clone(), Box::new(app))?;
        sim.with_node::<AppServer, _>(&as_addr, |a, ctx| a.run_tick(ctx));

        Ok(Testbed {
            sim,
            core,
            as_addr,
            installed,
        })
    }

    pub fn service(&self) -> &ExamService {
        &self.app_server().service
    }

    /// Runs a service command on the AS at the current virtual time.
    pub fn command(&mut self, cmd: Command) -> Result<Outcome, ExamError> {
        let as_addr = self.as_addr.clone();
        self.sim
            .with_node::<AppServer, _>(&as_addr, |a, ctx| a.command(ctx, cmd))
            .expect("application server node")
    }

    /// Credentials for a provisioned user, with the key read from the HSS.
    pub fn identity_for(&self, user: &UserId) -> Option<UeIdentity> {
        let impu = self.service().user(user)?.impu.clone();
        let core = self.core.borrow();
        let profile = core.hss.lookup_by_impu(&impu).ok()?;
        Some(UeIdentity {
            impi: profile.impi.clone(),
            impu,
            key: profile.secret_key.clone(),
        })
    }

    pub fn ue_addr_for(user: &UserId) -> NodeAddress {
        addr(&format!("ue-{user}"))
    }

    pub fn add_ue(&mut self, at: &NodeAddress, identity: UeIdentity) {
        let agent = UeAgent::new(identity, pcscf_addr(), service_uri());
        self.sim
            .register_node(at.clone(), Box::new(agent))
            .expect("UE address not yet registered");
    }

    pub fn ue(&self, at: &NodeAddress) -> Option<&UeAgent> {
        self.sim.node::<UeAgent>(at)
    }
}
