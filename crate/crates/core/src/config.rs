//! Named device presets: Hamiltonian parameters and noise models.

use crate::error::{Error, Result};
use crate::model::{j_to_lambda, JParams, LambdaParams};
use crate::noise::{DecoherenceModel, GaussianReadout, NoiseModel, PulseShapeModel, ReadoutModel};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Preset {
    pub name: String,
    pub theta: JParams,
    pub noise: NoiseModel,
    /// Where the values come from.
    pub provenance: String,
}

impl Preset {
    pub fn lambda(&self) -> LambdaParams {
        j_to_lambda(&self.theta)
    }
}

struct Device {
    label: &'static str,
    /// T1 and T2 of control and target, in microseconds.
    t1: (f64, f64),
    t2: (f64, f64),
    gaussian_readout: bool,
    pulse: PulseShapeModel,
    table: &'static str,
    /// `(J in units of 1e6 s^-1, (r0, r1))` per drive configuration.
    configs: &'static [([f64; 6], (f64, f64))],
    first_config: usize,
}

const DEVICE_D_PULSE: PulseShapeModel = PulseShapeModel { a: 6.2774, b: 1.5086e-9 };

const DEVICES: &[Device] = &[
    Device {
        label: "D",
        t1: (94.0, 75.7),
        t2: (177.2, 128.1),
        gaussian_readout: false,
        pulse: DEVICE_D_PULSE,
        table: "device D summary table (drive configurations 1-5)",
        configs: &[
            ([-3.88, -1.08, -0.24, 5.44, 1.07, 0.21], (0.012, 0.025)),
            ([-4.57, -1.47, -0.29, 6.50, 1.39, 0.41], (0.0078, 0.033)),
            ([-5.12, -1.65, -0.23, 7.52, 1.66, 0.33], (0.0078, 0.035)),
            ([-5.42, -1.95, 0.37, 8.38, 1.90, 0.07], (0.0078, 0.039)),
            ([-5.72, -2.13, 0.03, 9.20, 2.15, 0.11], (0.0078, 0.023)),
        ],
        first_config: 1,
    },
    Device {
        label: "A",
        t1: (65.4, 32.9),
        t2: (71.1, 57.7),
        gaussian_readout: true,
        pulse: PulseShapeModel { a: 0.0, b: 0.0 },
        table: "devices A/B/C summary table",
        configs: &[
            ([58.47, 3.68, -5.00, 10.76, 2.29, -0.52], (0.160, 0.215)),
            ([38.93, 2.34, 0.26, 11.15, -3.30, -0.30], (0.150, 0.210)),
            ([19.35, 0.12, 0.69, 10.80, -0.66, 0.24], (0.220, 0.150)),
            ([-0.21, -1.68, 0.20, 10.47, 1.50, -0.86], (0.145, 0.150)),
            ([-20.11, -1.35, 0.73, 10.55, 0.94, -1.13], (0.190, 0.185)),
        ],
        first_config: 0,
    },
    Device {
        label: "B",
        t1: (63.2, 78.1),
        t2: (73.9, 124.3),
        gaussian_readout: true,
        pulse: PulseShapeModel { a: 0.0, b: 0.0 },
        table: "devices A/B/C summary table",
        configs: &[
            ([30.03, 3.62, 0.49, 1.75, -0.16, -0.31], (0.110, 0.140)),
            ([15.34, 1.85, 0.19, 1.81, -0.75, -0.59], (0.090, 0.070)),
            ([0.89, 0.72, 0.24, 1.82, -0.54, -0.34], (0.120, 0.160)),
            ([-13.71, -2.31, -0.54, 1.78, 0.09, 0.09], (0.130, 0.160)),
            ([-28.45, -2.19, -1.20, 1.56, 2.15, 0.27], (0.110, 0.100)),
        ],
        first_config: 0,
    },
    Device {
        label: "C01",
        t1: (34.2, 45.0),
        t2: (39.2, 63.1),
        gaussian_readout: true,
        pulse: PulseShapeModel { a: 0.0, b: 0.0 },
        table: "devices A/B/C summary table (pair 0-1)",
        configs: &[
            ([-8.52, -2.15, -0.26, 10.93, 0.85, 0.32], (0.200, 0.160)),
            ([-3.88, -2.26, -0.35, 10.88, 1.46, 0.43], (0.120, 0.160)),
            ([0.58, -1.81, -0.45, 10.81, 0.83, 1.24], (0.080, 0.070)),
            ([4.86, -1.66, 0.08, 10.85, 0.44, -0.14], (0.070, 0.110)),
            ([9.53, -0.17, 0.29, 10.76, -0.17, -0.32], (0.070, 0.120)),
        ],
        first_config: 0,
    },
    Device {
        label: "C02",
        t1: (34.2, 45.0),
        t2: (35.8, 52.4),
        gaussian_readout: true,
        pulse: PulseShapeModel { a: 0.0, b: 0.0 },
        table: "devices A/B/C summary table (pair 0-2)",
        configs: &[
            ([9.42, -0.71, 0.27, 12.21, -0.71, -0.25], (0.070, 0.060)),
            ([6.17, -0.46, 0.09, 11.96, -0.59, -0.26], (0.070, 0.110)),
            ([2.59, 0.05, -0.26, 11.90, -1.66, -0.17], (0.050, 0.090)),
            ([-1.03, -0.10, -0.16, 11.99, -0.63, -0.18], (0.090, 0.060)),
            ([-4.53, 0.10, -0.31, 12.04, -0.18, 0.39], (0.100, 0.110)),
        ],
        first_config: 0,
    },
];

pub fn preset_names() -> Vec<String> {
    DEVICES
        .iter()
        .flat_map(|d| (0..d.configs.len()).map(move |k| format!("{}-config{}", d.label, k + d.first_config)))
        .collect()
}

pub fn preset(name: &str) -> Result<Preset> {
    for d in DEVICES {
        for (k, (j, (r0, r1))) in d.configs.iter().enumerate() {
            let this = format!("{}-config{}", d.label, k + d.first_config);
            if this != name {
                continue;
            }
            let readout = if d.gaussian_readout {
                ReadoutModel::GaussianSignal(GaussianReadout::matching_flip_rates(*r0, *r1)?)
            } else {
                ReadoutModel::bit_flip(*r0, *r1)?
            };
            let decoherence = DecoherenceModel::two_qubit(d.t1.0 * 1e-6, d.t2.0 * 1e-6, d.t1.1 * 1e-6, d.t2.1 * 1e-6)?;
            let pulse_note = if d.pulse.a == 0.0 { "no pulse-edge model" } else { "pulse-edge fit of device D" };
            return Ok(Preset {
                name: this,
                theta: JParams::from_array(j.map(|v| v * 1e6)),
                noise: NoiseModel { readout, pulse: d.pulse, decoherence },
                provenance: format!(
                    "J and readout from the {}; T1/T2 from the device table; {}",
                    d.table, pulse_note
                ),
            });
        }
    }
    Err(Error::Config(format!("unknown preset {name:?}; known presets: {}", preset_names().join(", "))))
}
