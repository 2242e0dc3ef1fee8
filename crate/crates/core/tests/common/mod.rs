#![allow(dead_code)]

use aqms_core::chaincode::{ChaincodePackage, EmissionRecord, LocationType};
use aqms_core::config::NetworkConfig;
use aqms_core::network::{establish_network, Network, NetworkOptions};

pub const ACTOR: &str = "gateway-1";
pub const ORG1_ENDORSER: &str = "peer0.iiitkottayam.com";
pub const ORG2_ENDORSER: &str = "peer0.aic.com";
pub const ORG1_COMMITTER: &str = "peer1.iiitkottayam.com";

/// A valid record whose state key is unique per `i`.
pub fn record(i: u64) -> EmissionRecord {
    EmissionRecord {
        timestamp: 1_580_000_000_000 + i * 60_000,
        location_type: LocationType::ALL[(i % 4) as usize],
        so2: 2.0 + (i % 7) as f64,
        no2: 11.5 + (i % 5) as f64,
        rspm: 40.0 + (i % 11) as f64,
        co: 0.25 * (1 + i % 3) as f64,
        industry_names: vec!["Kottayam Rubber Works".into()],
        monitoring_location: format!("site-{}", i % 3),
        penalty_value: 0.0,
        reporting_agency: "KSPCB".into(),
    }
}

/// Bundled two-org topology, chaincode installed on every peer and instantiated
/// under the default two-endorser policy.
pub fn ready_network(options: NetworkOptions) -> Network {
    ready_network_with(NetworkConfig::fibchannel(), options)
}

pub fn ready_network_with(config: NetworkConfig, options: NetworkOptions) -> Network {
    let mut net = establish_network(config, options).expect("network comes up");
    let pkg = ChaincodePackage::emission();
    net.install_everywhere(&pkg).expect("install");
    net.instantiate_default(&pkg).expect("instantiate");
    net
}
