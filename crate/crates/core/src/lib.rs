//! MOMEX testbed core: SIP codec, discrete-event network simulator,
//! IMS control plane, exam application server and scripted UEs.

pub mod demo;
pub mod exam;
pub mod ims;
pub mod netsim;
pub mod sip;
pub mod testbed;
pub mod ue;
