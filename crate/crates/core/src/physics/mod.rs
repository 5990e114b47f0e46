//! Per-channel propagation over the amplified link: span attenuation,
//! amplifier gain/tilt with ASE, closed-form GN nonlinear interference,
//! and the resulting GSNR / Q-factor at the receiver.
//!
//! All functions are pure. The chain itself is generic over [`Real`] so the
//! digital twin can push dual numbers through exactly the same arithmetic.

mod link_file;
pub mod real;

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::gain::GainConfig;
pub use link_file::{parse_link_file, LinkFileError};
pub use real::{Dual, Real};

pub const SPAN_COUNT: usize = 4;
pub const AMPLIFIER_COUNT: usize = SPAN_COUNT + 2;

/// Power floor for anything reported in dBm.
pub const POWER_FLOOR_DBM: f64 = -60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// J·s
    pub planck: f64,
    /// Hz
    pub reference_bandwidth: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            planck: 6.626_070_15e-34,
            reference_bandwidth: 12.5e9,
        }
    }
}

/// Fixed WDM grid with per-slot occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGrid {
    pub slot_count: usize,
    /// Hz
    pub spacing: f64,
    /// Center of slot 0, Hz.
    pub anchor_frequency: f64,
    /// Hz
    pub channel_bandwidth: f64,
    pub active: Vec<bool>,
    pub is_real: Vec<bool>,
}

impl Default for ChannelGrid {
    fn default() -> Self {
        Self::empty(30)
    }
}

impl ChannelGrid {
    pub const MAX_REAL: usize = 6;

    pub fn empty(slot_count: usize) -> Self {
        Self {
            slot_count,
            spacing: 75e9,
            anchor_frequency: 193.05e12,
            channel_bandwidth: 63.9e9,
            active: vec![false; slot_count],
            is_real: vec![false; slot_count],
        }
    }

    pub fn frequency(&self, slot: usize) -> f64 {
        self.anchor_frequency + slot as f64 * self.spacing
    }

    /// Band edges used by the tilt definition: centers of the first and last slot.
    pub fn band_edges(&self) -> (f64, f64) {
        (
            self.frequency(0),
            self.frequency(self.slot_count.saturating_sub(1)),
        )
    }

    pub fn active_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.slot_count).filter(|&i| self.active[i])
    }

    pub fn real_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.slot_count).filter(|&i| self.active[i] && self.is_real[i])
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn real_count(&self) -> usize {
        self.real_slots().count()
    }

    pub fn is_valid(&self) -> bool {
        self.channel_bandwidth <= self.spacing
            && self.active.len() == self.slot_count
            && self.is_real.len() == self.slot_count
            && self.is_real.iter().filter(|&&r| r).count() <= Self::MAX_REAL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub length_km: f64,
    /// dB/km
    pub attenuation_db_per_km: f64,
    /// Lumped excess loss (aging, VOA), dB.
    pub extra_loss_db: f64,
    /// |β2|, ps²/km
    pub beta2_ps2_per_km: f64,
    /// γ, 1/(W·km)
    pub gamma_per_w_km: f64,
    pub is_cut: bool,
}

impl Default for Span {
    fn default() -> Self {
        Self::g652d(110.0)
    }
}

impl Span {
    /// Standard single-mode fiber defaults.
    pub fn g652d(length_km: f64) -> Self {
        Self {
            length_km,
            attenuation_db_per_km: 0.20,
            extra_loss_db: 0.0,
            beta2_ps2_per_km: 21.3,
            gamma_per_w_km: 1.3,
            is_cut: false,
        }
    }

    /// Datasheet loss α·L, dB.
    pub fn fiber_loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.length_km
    }

    pub fn total_loss_db(&self) -> f64 {
        self.fiber_loss_db() + self.extra_loss_db
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Amplifier {
    pub gain_db: f64,
    /// Band-edge to band-edge gain slope, dB. Positive favours high frequencies.
    pub tilt_db: f64,
    pub noise_figure_db: f64,
}

impl Default for Amplifier {
    fn default() -> Self {
        Self {
            gain_db: 18.0,
            tilt_db: 0.0,
            noise_figure_db: 5.0,
        }
    }
}

impl Amplifier {
    /// Gain seen by a channel at frequency `f`, dB.
    pub fn channel_gain_db(&self, f: f64, grid: &ChannelGrid) -> f64 {
        channel_gain_db(self.gain_db, self.tilt_db, f, grid)
    }
}

/// Gain at frequency `f` for an amplifier set to `gain_db` with edge-to-edge `tilt_db`.
pub fn channel_gain_db(gain_db: f64, tilt_db: f64, f: f64, grid: &ChannelGrid) -> f64 {
    let (f_min, f_max) = grid.band_edges();
    if f_max <= f_min {
        return gain_db;
    }
    let f_mid = 0.5 * (f_min + f_max);
    gain_db + tilt_db * (f - f_mid) / (f_max - f_min)
}

/// The physical plant: spans, amplifier chain, grid and receiver mapping.
///
/// Chain order: booster, then `(span, post-span amplifier)` for every span,
/// then the receiver preamplifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTopology {
    pub spans: Vec<Span>,
    pub amplifiers: Vec<Amplifier>,
    pub grid: ChannelGrid,
    pub constants: PhysicalConstants,
    /// Per-channel transmitter launch power, dBm.
    pub launch_power_dbm: f64,
    /// κ in `q = gsnr_db - κ`.
    pub q_offset_db: f64,
    /// Numeric ceiling on reported GSNR, dB.
    pub gsnr_cap_db: f64,
}

impl Default for LinkTopology {
    fn default() -> Self {
        Self {
            spans: vec![Span::default(); SPAN_COUNT],
            amplifiers: vec![Amplifier::default(); AMPLIFIER_COUNT],
            grid: ChannelGrid::default(),
            constants: PhysicalConstants::default(),
            launch_power_dbm: -20.0,
            q_offset_db: 0.0,
            gsnr_cap_db: 60.0,
        }
    }
}

impl LinkTopology {
    pub fn is_valid(&self) -> bool {
        self.amplifiers.len() == self.spans.len() + 2
            && self.grid.is_valid()
            && self
                .spans
                .iter()
                .all(|s| s.length_km > 0.0 && s.attenuation_db_per_km > 0.0 && s.extra_loss_db >= 0.0)
    }

    /// Current amplifier settings as a [`GainConfig`].
    pub fn gain_config(&self) -> GainConfig {
        GainConfig {
            gains: self.amplifiers.iter().map(|a| a.gain_db).collect(),
            tilts: self.amplifiers.iter().map(|a| a.tilt_db).collect(),
        }
    }

    pub fn apply_config(&mut self, config: &GainConfig) {
        for (amp, (&g, &t)) in self
            .amplifiers
            .iter_mut()
            .zip(config.gains.iter().zip(&config.tilts))
        {
            amp.gain_db = g;
            amp.tilt_db = t;
        }
    }

    /// Per-slot launch power in W (zero on idle slots).
    pub fn launch_vector(&self) -> Vec<f64> {
        let p = dbm_to_w(self.launch_power_dbm);
        (0..self.grid.slot_count)
            .map(|i| if self.grid.active[i] { p } else { 0.0 })
            .collect()
    }

    pub fn plant_params(&self) -> PlantParams<f64> {
        PlantParams {
            extra_loss_db: self.spans.iter().map(|s| s.extra_loss_db).collect(),
            noise_figure_db: self.amplifiers.iter().map(|a| a.noise_figure_db).collect(),
        }
    }
}

/// Per-channel result at the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub slot: usize,
    pub frequency_hz: f64,
    pub is_real: bool,
    pub received_power_w: f64,
    /// In the reference bandwidth, referred to the receiver.
    pub ase_power_w: f64,
    pub nli_power_w: f64,
    pub gsnr_db: Option<f64>,
    pub q_factor_db: Option<f64>,
}

/// Total optical power (signal + ASE + NLI over active channels) at an amplifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortPower {
    pub input_w: f64,
    pub output_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSnapshot {
    pub channels: Vec<ChannelReport>,
    pub amplifier_ports: Vec<PortPower>,
    /// First cut span, if any; downstream Q values are undefined.
    pub cut_span: Option<usize>,
}

impl LinkSnapshot {
    pub fn is_cut(&self) -> bool {
        self.cut_span.is_some()
    }

    /// Minimum Q over transponder-carrying channels.
    pub fn min_real_q(&self) -> Option<f64> {
        let mut min: Option<f64> = None;
        for ch in self.channels.iter().filter(|c| c.is_real) {
            let q = ch.q_factor_db?;
            min = Some(min.map_or(q, |m: f64| m.min(q)));
        }
        min
    }
}

/// Effective and asymptotic effective length of a span, km.
pub fn effective_length(span: &Span) -> (f64, f64) {
    let a_lin = span.attenuation_db_per_km / (10.0 * E.log10());
    let l_eff_a = 1.0 / a_lin;
    let l_eff = (1.0 - (-a_lin * span.length_km).exp()) / a_lin;
    (l_eff, l_eff_a)
}

/// Attenuate per-channel powers through one span.
pub fn propagate_span(powers: &[f64], span: &Span) -> Vec<f64> {
    if span.is_cut {
        return vec![0.0; powers.len()];
    }
    let t = db_to_lin(-span.total_loss_db());
    powers.iter().map(|p| p * t).collect()
}

/// ASE added by an amplifier on one channel, W in the reference bandwidth.
pub fn added_ase_w(constants: &PhysicalConstants, frequency: f64, nf_db: f64, gain_db: f64) -> f64 {
    ase_term(constants, frequency, gain_db) * db_to_lin(nf_db)
}

/// `h·f·(g−1)·B_ref`, clamped at zero; multiply by the linear NF.
fn ase_term(constants: &PhysicalConstants, frequency: f64, gain_db: f64) -> f64 {
    let g = db_to_lin(gain_db);
    (constants.planck * frequency * (g - 1.0) * constants.reference_bandwidth).max(0.0)
}

/// Amplify signal and accumulated noise; returns `(powers, ase)` per slot.
pub fn amplify(
    powers: &[f64],
    ase: &[f64],
    amp: &Amplifier,
    grid: &ChannelGrid,
    constants: &PhysicalConstants,
) -> (Vec<f64>, Vec<f64>) {
    let mut p = powers.to_vec();
    let mut a = ase.to_vec();
    for (i, (pi, ai)) in p.iter_mut().zip(a.iter_mut()).enumerate() {
        let f = grid.frequency(i);
        let g_db = amp.channel_gain_db(f, grid);
        let g = db_to_lin(g_db);
        *pi *= g;
        *ai = *ai * g + added_ase_w(constants, f, amp.noise_figure_db, g_db);
    }
    (p, a)
}

/// GN-model NLI efficiency η such that `P_nli = η·P³`, in W⁻².
pub fn nli_coefficient(span: &Span, grid: &ChannelGrid, n_active: usize) -> f64 {
    if span.is_cut || n_active == 0 {
        return 0.0;
    }
    let (l_eff_km, l_eff_a_km) = effective_length(span);
    let l_eff = l_eff_km * 1e3;
    let l_eff_a = l_eff_a_km * 1e3;
    // ps²/km -> s²/m and 1/(W·km) -> 1/(W·m)
    let beta2 = span.beta2_ps2_per_km * 1e-27;
    let gamma = span.gamma_per_w_km * 1e-3;
    let b_ch = grid.channel_bandwidth;
    let n = n_active as f64;
    let arg = (PI * PI / 2.0) * beta2 * l_eff_a * b_ch * b_ch * n.powf(2.0 * b_ch / grid.spacing);
    (8.0 / 27.0) * gamma * gamma * l_eff * l_eff / (b_ch * b_ch) * arg.asinh()
        / (PI * beta2 * l_eff_a)
}

/// NLI power generated in one span by a channel launched at `channel_input_power` W.
pub fn nli_power(channel_input_power: f64, span: &Span, grid: &ChannelGrid, n_active: usize) -> f64 {
    let p = channel_input_power;
    nli_coefficient(span, grid, n_active) * p * p * p
}

pub fn q_factor(gsnr_db: f64, q_offset_db: f64) -> f64 {
    gsnr_db - q_offset_db
}

/// Unknown plant parameters, possibly carrying derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams<T> {
    pub extra_loss_db: Vec<T>,
    pub noise_figure_db: Vec<T>,
}

/// Raw accumulators at the end of the chain, per slot.
#[derive(Debug, Clone)]
pub struct ChainOutput<T> {
    pub signal: Vec<T>,
    pub ase: Vec<T>,
    pub nli: Vec<T>,
    pub amp_input: Vec<T>,
    pub amp_output: Vec<T>,
    pub cut_span: Option<usize>,
}

/// Runs booster → (span → amplifier)×N → preamp with the given plant parameters.
///
/// `link`'s own `extra_loss_db` / `noise_figure_db` are ignored in favour of `params`.
pub fn run_chain<T: Real>(
    link: &LinkTopology,
    launch: &[f64],
    config: &GainConfig,
    params: &PlantParams<T>,
) -> ChainOutput<T> {
    let grid = &link.grid;
    let slots: Vec<usize> = grid.active_slots().collect();
    let n_active = slots.len();
    let zero = T::constant(0.0);
    let mut signal: Vec<T> = (0..grid.slot_count)
        .map(|i| T::constant(if grid.active[i] { launch[i] } else { 0.0 }))
        .collect();
    let mut ase = vec![zero; grid.slot_count];
    let mut nli = vec![zero; grid.slot_count];
    let mut amp_input = Vec::with_capacity(link.amplifiers.len());
    let mut amp_output = Vec::with_capacity(link.amplifiers.len());
    let mut cut_span = None;
    let mut dark = false;

    let total = |s: &[T], a: &[T], n: &[T]| {
        let mut acc = zero;
        for &i in &slots {
            acc += s[i] + a[i] + n[i];
        }
        acc
    };

    let mut amplify_stage = |k: usize, signal: &mut [T], ase: &mut [T], nli: &mut [T]| {
        amp_input.push(total(signal, ase, nli));
        let nf_lin = params.noise_figure_db[k].db_to_lin();
        for &i in &slots {
            let f = grid.frequency(i);
            let g_db = channel_gain_db(config.gains[k], config.tilts[k], f, grid);
            let g = T::constant(db_to_lin(g_db));
            signal[i] *= g;
            nli[i] *= g;
            ase[i] = ase[i] * g + nf_lin.scale(ase_term(&link.constants, f, g_db));
        }
        amp_output.push(total(signal, ase, nli));
    };

    amplify_stage(0, &mut signal, &mut ase, &mut nli);
    for (s, span) in link.spans.iter().enumerate() {
        if span.is_cut && !dark {
            dark = true;
            cut_span = Some(s);
        }
        if span.is_cut {
            for &i in &slots {
                signal[i] = zero;
                ase[i] = zero;
                nli[i] = zero;
            }
        } else {
            let eta = nli_coefficient(span, grid, n_active);
            let t = (-(params.extra_loss_db[s] + T::constant(span.fiber_loss_db()))).db_to_lin();
            for &i in &slots {
                let p = signal[i];
                nli[i] = (nli[i] + (p * p * p).scale(eta)) * t;
                signal[i] = p * t;
                ase[i] = ase[i] * t;
            }
        }
        amplify_stage(s + 1, &mut signal, &mut ase, &mut nli);
    }
    amplify_stage(link.spans.len() + 1, &mut signal, &mut ase, &mut nli);

    ChainOutput {
        signal,
        ase,
        nli,
        amp_input,
        amp_output,
        cut_span,
    }
}

/// GSNR in dB from receiver-side accumulators; `None` when the channel is dark.
pub fn gsnr_db<T: Real>(signal: T, ase: T, nli: T, cap_db: f64) -> Option<T> {
    if signal.value() <= 0.0 {
        return None;
    }
    let noise = ase + nli;
    if noise.value() <= 0.0 {
        return Some(T::constant(cap_db));
    }
    let g = (signal / noise).lin_to_db();
    if g.value() > cap_db {
        Some(T::constant(cap_db))
    } else {
        Some(g)
    }
}

/// Propagate `launch` (W per slot) through the link with `config` applied.
pub fn transmit(link: &LinkTopology, launch: &[f64], config: &GainConfig) -> LinkSnapshot {
    let out = run_chain(link, launch, config, &link.plant_params());
    snapshot_from_chain(link, &out)
}

pub(crate) fn snapshot_from_chain(link: &LinkTopology, out: &ChainOutput<f64>) -> LinkSnapshot {
    let grid = &link.grid;
    let channels = grid
        .active_slots()
        .map(|i| {
            let gsnr = gsnr_db(out.signal[i], out.ase[i], out.nli[i], link.gsnr_cap_db);
            ChannelReport {
                slot: i,
                frequency_hz: grid.frequency(i),
                is_real: grid.is_real[i],
                received_power_w: out.signal[i],
                ase_power_w: out.ase[i],
                nli_power_w: out.nli[i],
                gsnr_db: gsnr,
                q_factor_db: gsnr.map(|g| q_factor(g, link.q_offset_db)),
            }
        })
        .collect();
    let amplifier_ports = out
        .amp_input
        .iter()
        .zip(&out.amp_output)
        .map(|(&input_w, &output_w)| PortPower { input_w, output_w })
        .collect();
    LinkSnapshot {
        channels,
        amplifier_ports,
        cut_span: out.cut_span,
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    1e-3 * db_to_lin(dbm)
}

/// W to dBm, clamped at [`POWER_FLOOR_DBM`].
pub fn w_to_dbm(w: f64) -> f64 {
    if w <= 0.0 {
        return POWER_FLOOR_DBM;
    }
    (lin_to_db(w) + 30.0).max(POWER_FLOOR_DBM)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loaded(n: usize) -> LinkTopology {
        let mut link = LinkTopology::default();
        for i in 0..n {
            link.grid.active[i] = true;
            link.grid.is_real[i] = i % 5 == 0;
        }
        link
    }

    #[test]
    fn effective_length_reference_values() {
        let (l_eff, l_eff_a) = effective_length(&Span::g652d(110.0));
        // a = 0.2/4.342944819 = 0.0460517 /km; (1 - e^-5.0657)/a = 21.5777, 1/a = 21.7147
        assert!((l_eff - 21.5777).abs() < 1e-3, "{l_eff}");
        assert!((l_eff_a - 21.7147).abs() < 1e-3, "{l_eff_a}");
        let (long, asym) = effective_length(&Span::g652d(5000.0));
        assert!((long - asym).abs() < 1e-9);
        let mut zero = Span::g652d(0.0);
        zero.length_km = 0.0;
        assert_eq!(effective_length(&zero).0, 0.0);
    }

    #[test]
    fn span_loss_and_cut() {
        let span = Span::g652d(110.0);
        let out = propagate_span(&[1e-3], &span);
        assert!((out[0] - 1e-3 * 10f64.powf(-2.2)).abs() < 1e-18);
        assert!((out[0] - 6.31e-6).abs() < 1e-8);

        let mut cut = span.clone();
        cut.is_cut = true;
        assert_eq!(propagate_span(&[1e-3, 5e-3], &cut), vec![0.0, 0.0]);

        let mut lossy = span.clone();
        lossy.extra_loss_db = 3.0;
        let a = propagate_span(&[1e-3], &span)[0];
        let b = propagate_span(&[1e-3], &lossy)[0];
        assert!((lin_to_db(a / b) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn amplifier_ase_reference_value() {
        let c = PhysicalConstants::default();
        let ase = added_ase_w(&c, 193.1e12, 5.0, 20.0);
        assert!((ase - 5.0e-7).abs() < 0.02e-7, "{ase}");
        assert!((w_to_dbm(ase) + 33.0).abs() < 0.05);
    }

    #[test]
    fn unity_gain_adds_nothing() {
        let grid = {
            let mut g = ChannelGrid::default();
            g.active[3] = true;
            g
        };
        let amp = Amplifier {
            gain_db: 0.0,
            tilt_db: 0.0,
            noise_figure_db: 5.0,
        };
        let p = vec![1e-3; grid.slot_count];
        let a = vec![0.0; grid.slot_count];
        let (p2, a2) = amplify(&p, &a, &amp, &grid, &PhysicalConstants::default());
        assert_eq!(p2[3], 1e-3);
        assert_eq!(a2[3], 0.0);
    }

    #[test]
    fn tilt_spans_band_edges() {
        let grid = ChannelGrid::default();
        let amp = Amplifier {
            gain_db: 18.0,
            tilt_db: 2.0,
            noise_figure_db: 5.0,
        };
        let low = amp.channel_gain_db(grid.frequency(0), &grid);
        let high = amp.channel_gain_db(grid.frequency(29), &grid);
        assert!((high - low - 2.0).abs() < 1e-12);
        assert!((0.5 * (high + low) - 18.0).abs() < 1e-12);
    }

    #[test]
    fn nli_is_cubic_and_grows_with_load() {
        let span = Span::g652d(110.0);
        let grid = ChannelGrid::default();
        let a = nli_power(1e-3, &span, &grid, 20);
        let b = nli_power(2e-3, &span, &grid, 20);
        assert!(((b / a) - 8.0).abs() < 1e-12);
        assert!(nli_power(1e-3, &span, &grid, 30) > nli_power(1e-3, &span, &grid, 1));
        let mut cut = span;
        cut.is_cut = true;
        assert_eq!(nli_power(1e-3, &cut, &grid, 20), 0.0);
    }

    #[test]
    fn q_offset_is_a_shift() {
        assert_eq!(q_factor(20.0, 0.0), 20.0);
        assert_eq!(q_factor(20.0, 2.0), 18.0);
    }

    #[test]
    fn zero_launch_reports_no_q() {
        let link = loaded(5);
        let snap = transmit(&link, &vec![0.0; 30], &link.gain_config());
        assert!(snap.channels.iter().all(|c| c.received_power_w == 0.0));
        assert!(snap.channels.iter().all(|c| c.q_factor_db.is_none()));
    }

    #[test]
    fn cut_darkens_everything_downstream() {
        let mut link = loaded(20);
        link.spans[1].is_cut = true;
        let snap = transmit(&link, &link.launch_vector(), &link.gain_config());
        assert_eq!(snap.cut_span, Some(1));
        assert!(snap.channels.iter().all(|c| c.received_power_w == 0.0));
        assert!(snap.min_real_q().is_none());
        assert_eq!(snap.amplifier_ports[2].input_w, 0.0);
        assert!(snap.amplifier_ports[1].input_w > 0.0);
    }

    #[test]
    fn noiseless_link_caps_gsnr() {
        let mut link = loaded(1);
        for amp in &mut link.amplifiers {
            amp.noise_figure_db = f64::NEG_INFINITY;
        }
        for span in &mut link.spans {
            span.gamma_per_w_km = 0.0;
        }
        let snap = transmit(&link, &link.launch_vector(), &link.gain_config());
        assert_eq!(snap.channels[0].gsnr_db, Some(60.0));
    }
}
