#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "ldbp/channel.hpp"
#include "ldbp/dbp.hpp"
#include "ldbp/pmd_comp.hpp"
#include "ldbp/signal.hpp"
#include "ldbp/subband.hpp"
#include "ldbp/training.hpp"

namespace ldbp::exp {

struct PmdSpec {
  int sections = 10;
  double mean_dgd_symbols = 0.5;
  std::uint64_t seed = 1;
};

/// Transmission scenario. Frames are cyclic: every frame is one period of a
/// periodic symbol stream and the channel is solved on that period.
struct Scenario {
  FiberParams fiber;
  bool fiber_enabled = true;  ///< false: back-to-back (PMD and receiver noise only)
  double symbol_rate_hz = 10e9;
  int modulation_order = 16;
  double rolloff = 0.1;
  int tx_sps = 8;
  int rx_sps = 2;
  int rrc_span_symbols = 32;
  int steps_per_span = 50;
  std::size_t n_pols = 1;
  bool amplifier_noise = false;
  double noise_figure_db = 5.0;
  std::optional<double> receiver_snr_db;  ///< white noise at the receiver, Es/N0 per polarization
  std::optional<PmdSpec> pmd;
  std::size_t frame_symbols = 2048;
  std::uint64_t seed = 1;

  void validate() const;
  double rx_sample_rate() const { return symbol_rate_hz * rx_sps; }
  std::optional<PmdLink> pmd_link() const;
};

struct Frame {
  std::uint64_t index = 0;
  SymbolFrame tx;
  ComplexSignal rx;  ///< at rx_sps
};

struct Dataset {
  Scenario scenario;
  double launch_dbm = 0.0;
  std::vector<Frame> frames;
};

/// Seeds of the random streams behind one frame.
struct FrameSeeds {
  std::uint64_t symbols = 0;
  std::uint64_t receiver_noise = 0;
  std::uint64_t amplifier = 0;  ///< shared by all frames, keyed with the frame index
};
FrameSeeds frame_seeds(const Scenario& s, std::uint64_t index);

/// Scale applied to unit-energy shaped symbols so that the launch power
/// (summed over polarizations) equals launch_dbm.
double launch_amplitude(const Scenario& s, double launch_dbm);
Frame simulate_frame(const Scenario& s, double launch_dbm, std::uint64_t index);
/// Frames first_index .. first_index+count-1, generated in parallel; the
/// result does not depend on the thread count.
Dataset simulate(const Scenario& s, double launch_dbm, std::uint64_t first_index, std::size_t count, std::size_t threads = 1);

/// Matched filter scaled so that detected symbols are unit-scale replicas of
/// the transmitted ones in back-to-back operation.
struct Receiver {
  std::vector<double> mf_taps;
  std::size_t sps = 2;
};
Receiver make_receiver(const Scenario& s, double launch_dbm);

ComplexSignal matched_filter_cyclic(const ComplexSignal& sig, const Receiver& r);
SymbolFrame detect_cyclic(const ComplexSignal& sig, const Receiver& r);

/// Prepends and appends `guard` samples taken cyclically from the other end.
ComplexSignal cyclic_extend(const ComplexSignal& sig, std::size_t guard);
ComplexSignal crop(const ComplexSignal& sig, std::size_t begin, std::size_t length);

using SignalMap = std::function<ComplexSignal(const ComplexSignal&)>;

/// Applies `map` to every frame after cyclic extension by guard samples,
/// detects all interior symbols and returns the effective SNR over the whole
/// dataset. With `mf_first` the matched filter precedes the map.
double evaluate(const Dataset& d, const Receiver& r, const SignalMap& map, std::size_t guard_samples, bool mf_first = false);
/// As evaluate, but picks the best polarization assignment (swap and/or
/// conjugation), which blind equalizers cannot resolve.
double evaluate_blind(const Dataset& d, const Receiver& r, const SignalMap& map, std::size_t guard_samples);

double eval_linear_cd(const Dataset& d, const Receiver& r);
double eval_fd_dbp(const Dataset& d, const Receiver& r, int n_steps);
double eval_dbp(const Dataset& d, const Receiver& r, const DbpModel& m);
double eval_subband(const Dataset& d, const Receiver& r, const SubbandDbpModel& m, const FilterBankConfig& bank,
                    std::size_t guard_samples);

std::size_t dbp_receptive_samples(const DbpModel& m);

// ---- training windows ------------------------------------------------------

struct WindowSpec {
  std::size_t symbols = 256;
  std::size_t guard_symbols = 48;
};

struct Window {
  ad::Tensor input;   ///< rx samples for symbols [k0 - guard, k0 + symbols + guard)
  ad::Tensor target;  ///< tx symbols [k0, k0 + symbols)
  ComplexSignal signal;
};

Window extract_window(const Frame& f, std::size_t sps, std::size_t first_symbol, const WindowSpec& w);
/// Frame and offset drawn from (seed, iteration, element).
Window random_window(const Dataset& d, const WindowSpec& w, std::uint64_t seed, long iteration, std::size_t element);

/// Tape pipeline after the equalizer: matched filter, decimation to symbol
/// rate, interior crop and MSE against the target.
ad::Var symbol_mse(ad::Var equalized, const Window& win, const Receiver& r, const WindowSpec& w);

TrainProblem dbp_problem(const DbpModel& architecture, const Dataset& train, const Dataset* validation, const Receiver& r,
                         const WindowSpec& w, std::uint64_t seed, long validate_every);

TrainProblem subband_problem(const SubbandDbpModel& architecture, const FilterBankConfig& bank, const Dataset& train,
                             const Dataset* validation, const Receiver& r, const WindowSpec& w, std::uint64_t seed,
                             long validate_every, std::size_t eval_guard_samples);

/// Blocks for PMD adaptation: matched-filtered windows of the dataset.
BlockSource pmd_blocks(const Dataset& d, const Receiver& r, const WindowSpec& w, std::uint64_t seed);

}  // namespace ldbp::exp
