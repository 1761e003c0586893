#pragma once

#include <cstdint>
#include <string>

#include "t4d/manifest.hpp"

namespace t4d {

// How the two classes differ in the generated data.
//
// Amplitude: class 1 receives an added in-band sinusoid (random per-subject
// frequency in [f_lo, f_hi] and phase) inside a fixed ellipsoidal region;
// class 0 receives nothing. The signal shows up directly in voxel-wise
// temporal variance, so even purely spatial models can separate the classes.
//
// TemporalShape: both classes receive a two-component waveform
// A*(sin(th) + 0.6*sin(2*th + psi)) of identical amplitude and power, with
// the harmonic offset psi = 0 for class 1 and psi = pi for class 0. The two
// families are exact time reversals of each other, so every temporal
// window's per-voxel mean and standard deviation have identical class
// distributions -- moment-based features carry no label information -- while
// the waveform shape (rise/fall asymmetry) is only visible to models that
// process the time axis explicitly. The base frequency is drawn from
// [f_lo, f_hi/2] so the harmonic stays in band.
enum class SignalMode { Amplitude, TemporalShape };

const char* signal_mode_name(SignalMode m);
SignalMode parse_signal_mode(const std::string& name);

struct SynthConfig {
    int train_per_class = 8;
    int val_per_class = 4;
    int test_per_class = 4;
    int extent = 16;         // cubic spatial extent
    int frames = 64;         // temporal length
    double period = 2.0;     // seconds per frame
    double amplitude = 3.0;  // signal amplitude (SNR knob)
    double noise_sigma = 1.0;
    double f_lo = 0.03, f_hi = 0.08;  // Hz
    SignalMode mode = SignalMode::Amplitude;
    std::uint64_t seed = 42;

    void validate() const;
};

// Generator self-check: mean in-region temporal variance per class, and the
// margin the configuration implies (amplitude^2/4; an added sinusoid of
// amplitude A raises expected voxel variance by A^2/2).
struct SynthSummary {
    double class0_region_variance = 0.0;
    double class1_region_variance = 0.0;
    double margin = 0.0;
    bool margin_met = false;  // Amplitude mode: class1 - class0 >= margin
};

// Writes one T4DF file per subject plus `manifest.tsv` into out_dir
// (created if missing). Byte-identical output for identical configs.
SynthSummary generate_synthetic(const SynthConfig& config, const std::string& out_dir);

}  // namespace t4d
