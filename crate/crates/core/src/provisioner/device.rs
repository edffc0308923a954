//! In-process device mocks behind one command set: get, edit the candidate
//! datastore, commit it to running, or discard it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::line::{AmpMode, AmpSetting, Element, LineSettings};
use crate::plant::OpticalLinePlant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Fxc,
    Trx,
    Edfa,
    Wss,
    Osa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Datastore {
    Candidate,
    Running,
}

/// One managed device with candidate and running configurations, each a
/// JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEndpoint {
    pub device_id: String,
    pub kind: DeviceKind,
    running: Value,
    candidate: Value,
}

impl DeviceEndpoint {
    pub fn new(device_id: impl Into<String>, kind: DeviceKind, config: Value) -> Result<Self> {
        let device_id = device_id.into();
        if !config.is_object() {
            return Err(Error::Device { device: device_id, msg: "configuration must be a JSON object".into() });
        }
        Ok(Self { device_id, kind, running: config.clone(), candidate: config })
    }

    pub fn get(&self, store: Datastore) -> &Value {
        match store {
            Datastore::Candidate => &self.candidate,
            Datastore::Running => &self.running,
        }
    }

    /// Merges the keys of `patch` into the candidate; `null` removes a key.
    pub fn edit_candidate(&mut self, patch: &Value) -> Result<()> {
        let Value::Object(p) = patch else {
            return Err(self.err("edit must be a JSON object"));
        };
        let c = self.candidate.as_object_mut().expect("configurations are objects");
        for (k, v) in p {
            if v.is_null() {
                c.remove(k);
            } else {
                c.insert(k.clone(), v.clone());
            }
        }
        Ok(())
    }

    pub fn commit(&mut self) {
        self.running = self.candidate.clone();
    }

    pub fn discard(&mut self) {
        self.candidate = self.running.clone();
    }

    /// Serialized running configuration.
    pub fn snapshot(&self) -> Vec<u8> {
        serde_json::to_vec(&self.running).expect("JSON values serialize")
    }

    /// Replaces the candidate with a snapshot and commits it.
    pub fn restore(&mut self, snapshot: &[u8]) -> Result<()> {
        let v: Value = serde_json::from_slice(snapshot).map_err(|e| self.err(format!("bad snapshot: {e}")))?;
        if !v.is_object() {
            return Err(self.err("snapshot is not a JSON object"));
        }
        self.candidate = v;
        self.commit();
        Ok(())
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Device { device: self.device_id.clone(), msg: msg.into() }
    }
}

/// FXC route for the line under provisioning and the one it replaces.
pub const ROUTE_NEW: &str = "new_line";
pub const ROUTE_OLD: &str = "old_line";
pub const FXC_ID: &str = "FXC";
pub const OSA_ID: &str = "OSA";

fn amp_config(s: &AmpSetting) -> Value {
    let mut m = Map::new();
    m.insert("mode".into(), serde_json::to_value(s.mode).expect("enum serializes"));
    m.insert("gain_db".into(), s.gain_db.into());
    m.insert("tilt_db".into(), s.tilt_db.into());
    m.insert("power_dbm".into(), s.power_dbm.into());
    Value::Object(m)
}

/// Every device of a plant, keyed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSet {
    pub devices: BTreeMap<String, DeviceEndpoint>,
}

impl DeviceSet {
    /// Devices as found before provisioning: amplifiers at the plant's
    /// settings, traffic still on the old route.
    pub fn for_plant(plant: &OpticalLinePlant) -> Result<Self> {
        let mut devices = BTreeMap::new();
        let mut add = |d: DeviceEndpoint| {
            devices.insert(d.device_id.clone(), d);
        };
        let settings = plant.nominal_settings();
        for t in &plant.line.elements {
            match &t.element {
                Element::Edfa(e) => {
                    add(DeviceEndpoint::new(&e.edfa_id, DeviceKind::Edfa, amp_config(&settings.resolve(e)))?)
                }
                Element::Node(n) => {
                    add(DeviceEndpoint::new(&n.node_id, DeviceKind::Wss, serde_json::json!({ "loss_db": n.loss_db }))?)
                }
                Element::Span(_) => {}
            }
        }
        for t in &plant.transceivers {
            add(DeviceEndpoint::new(
                &t.trx_id,
                DeviceKind::Trx,
                serde_json::json!({ "slot": t.slot, "mode": "traffic" }),
            )?);
        }
        add(DeviceEndpoint::new(FXC_ID, DeviceKind::Fxc, serde_json::json!({ "route": ROUTE_OLD }))?);
        add(DeviceEndpoint::new(OSA_ID, DeviceKind::Osa, serde_json::json!({ "sweeping": false }))?);
        Ok(Self { devices })
    }

    pub fn get(&self, id: &str) -> Result<&DeviceEndpoint> {
        self.devices.get(id).ok_or_else(|| Error::Device { device: id.into(), msg: "unknown device".into() })
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut DeviceEndpoint> {
        self.devices.get_mut(id).ok_or_else(|| Error::Device { device: id.into(), msg: "unknown device".into() })
    }

    pub fn snapshot(&self) -> BTreeMap<String, Vec<u8>> {
        self.devices.iter().map(|(id, d)| (id.clone(), d.snapshot())).collect()
    }

    pub fn restore(&mut self, snap: &BTreeMap<String, Vec<u8>>) -> Result<()> {
        for (id, bytes) in snap {
            self.get_mut(id)?.restore(bytes)?;
        }
        Ok(())
    }

    /// Stages and commits amplifier settings; nothing changes if any
    /// amplifier is unknown.
    pub fn apply_settings(&mut self, settings: &LineSettings) -> Result<()> {
        for id in settings.amps.keys() {
            if self.get(id)?.kind != DeviceKind::Edfa {
                return Err(Error::Device { device: id.clone(), msg: "not an amplifier".into() });
            }
        }
        for (id, s) in &settings.amps {
            let d = self.get_mut(id)?;
            d.edit_candidate(&amp_config(s))?;
            d.commit();
        }
        Ok(())
    }

    /// Commits one key on one device.
    pub fn set(&mut self, id: &str, key: &str, value: Value) -> Result<()> {
        let d = self.get_mut(id)?;
        d.edit_candidate(&serde_json::json!({ key: value }))?;
        d.commit();
        Ok(())
    }

    /// Running amplifier configuration as line settings.
    pub fn settings(&self) -> Result<LineSettings> {
        let mut out = LineSettings::default();
        for d in self.devices.values().filter(|d| d.kind == DeviceKind::Edfa) {
            let r = d.get(Datastore::Running);
            let num = |k: &str| r.get(k).and_then(Value::as_f64).ok_or_else(|| d.err(format!("missing {k}")));
            let mode: AmpMode = serde_json::from_value(r.get("mode").cloned().unwrap_or(Value::Null))
                .map_err(|e| d.err(e.to_string()))?;
            out.set(
                d.device_id.clone(),
                AmpSetting { mode, gain_db: num("gain_db")?, tilt_db: num("tilt_db")?, power_dbm: num("power_dbm")? },
            );
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::example_plant;

    #[test]
    fn running_changes_only_on_commit() {
        let mut d = DeviceEndpoint::new("a", DeviceKind::Edfa, serde_json::json!({ "gain_db": 10.0 })).unwrap();
        d.edit_candidate(&serde_json::json!({ "gain_db": 12.0, "x": 1 })).unwrap();
        assert_eq!(d.get(Datastore::Running)["gain_db"], 10.0);
        assert_eq!(d.get(Datastore::Candidate)["gain_db"], 12.0);
        d.discard();
        assert_eq!(d.get(Datastore::Candidate), d.get(Datastore::Running));
        d.edit_candidate(&serde_json::json!({ "gain_db": 13.0 })).unwrap();
        d.commit();
        assert_eq!(d.get(Datastore::Running)["gain_db"], 13.0);
        d.edit_candidate(&serde_json::json!({ "gain_db": null })).unwrap();
        assert!(d.get(Datastore::Candidate).get("gain_db").is_none());
        assert!(d.edit_candidate(&serde_json::json!([1])).is_err());
    }

    #[test]
    fn restore_is_byte_identical() {
        let mut set = DeviceSet::for_plant(&example_plant()).unwrap();
        let snap = set.snapshot();
        let mut s = set.settings().unwrap();
        s.set("CL-BST", AmpSetting::gain(14.0, 0.0));
        set.apply_settings(&s).unwrap();
        set.set(FXC_ID, "route", ROUTE_NEW.into()).unwrap();
        assert_ne!(set.snapshot(), snap);
        set.restore(&snap).unwrap();
        assert_eq!(set.snapshot(), snap);
    }

    #[test]
    fn settings_roundtrip_through_devices() {
        let p = example_plant();
        let set = DeviceSet::for_plant(&p).unwrap();
        assert_eq!(set.settings().unwrap(), p.nominal_settings());
        assert_eq!(set.get(FXC_ID).unwrap().get(Datastore::Running)["route"], ROUTE_OLD);
        assert_eq!(set.devices.values().filter(|d| d.kind == DeviceKind::Trx).count(), p.transceivers.len());
    }

    #[test]
    fn unknown_amplifier_changes_nothing() {
        let mut set = DeviceSet::for_plant(&example_plant()).unwrap();
        let before = set.snapshot();
        let mut s = LineSettings::default();
        s.set("CL-BST", AmpSetting::gain(14.0, 0.0)).set("nope", AmpSetting::gain(1.0, 0.0));
        assert!(set.apply_settings(&s).is_err());
        assert_eq!(set.snapshot(), before);
    }
}
