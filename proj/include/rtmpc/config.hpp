#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "rtmpc/bicycle.hpp"
#include "rtmpc/model.hpp"
#include "rtmpc/synthesis.hpp"

namespace rtmpc {

// Flat "key = value" file with [section] headers; '#' starts a comment.
// Keys are stored as "section.key".
class KeyValueFile {
 public:
  static KeyValueFile parse(std::istream& is) {
    KeyValueFile kv;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[' && trimmed.back() == ']') {
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      kv.values_[section.empty() ? key : section + "." + key] = value;
    }
    return kv;
  }

  static KeyValueFile parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    return parse(is);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }

  std::int64_t get(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoll(it->second);
  }

 private:
  std::map<std::string, std::string> values_;

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
};

// Everything a full experiment needs; defaults reproduce the case study.
struct ExperimentConfig {
  // Residual learning.
  int feature_count = 300;
  std::string length_scale = "median";  // "median" or a positive number
  double lambda = 1e-6;
  double beta = 1.2;
  int train_count = 20000;
  int validation_count = 5000;
  std::uint64_t train_seed = 1;
  std::uint64_t validation_seed = 2;
  std::uint64_t basis_seed = 3;

  // Training domain.
  Domain domain;

  // Plant and scenario.
  bicycle::BicycleParams plant;
  bicycle::ScenarioConfig scenario;

  // MPC.
  int horizon = 20;
  Eigen::MatrixXd Q = (Eigen::MatrixXd(2, 2) << 10.0, 0.0, 0.0, 10.0).finished();
  Eigen::MatrixXd R = Eigen::MatrixXd::Constant(1, 1, 1.0);
  Eigen::VectorXd state_bound = (Eigen::VectorXd(2) << 1.0, 0.2).finished();
  Eigen::VectorXd input_bound = Eigen::VectorXd::Constant(1, 0.5);
  TubeLaw tube_law = TubeLaw::kPaperSquared;

  std::string out_dir = "out";

  static ExperimentConfig defaults() {
    ExperimentConfig c;
    // Training domain: slightly beyond the constraint box (|e_y| <= 1,
    // |e_psi| <= 0.2, |delta| <= 0.5). A wider domain only inflates the
    // linear-baseline residual bound with states the controller never visits.
    c.domain.state_lo = (Eigen::VectorXd(2) << -1.2, -0.25).finished();
    c.domain.state_hi = (Eigen::VectorXd(2) << 1.2, 0.25).finished();
    c.domain.input_lo = Eigen::VectorXd::Constant(1, -0.55);
    c.domain.input_hi = Eigen::VectorXd::Constant(1, 0.55);
    return c;
  }

  static ExperimentConfig load(const KeyValueFile& kv) {
    ExperimentConfig c = defaults();
    c.feature_count = static_cast<int>(kv.get("learning.features", std::int64_t{c.feature_count}));
    c.length_scale = kv.get("learning.length_scale", c.length_scale);
    c.lambda = kv.get("learning.lambda", c.lambda);
    c.beta = kv.get("learning.beta", c.beta);
    c.train_count = static_cast<int>(kv.get("learning.train_count", std::int64_t{c.train_count}));
    c.validation_count =
        static_cast<int>(kv.get("learning.validation_count", std::int64_t{c.validation_count}));
    c.train_seed = static_cast<std::uint64_t>(kv.get("seeds.train", std::int64_t{1}));
    c.validation_seed = static_cast<std::uint64_t>(kv.get("seeds.validation", std::int64_t{2}));
    c.basis_seed = static_cast<std::uint64_t>(kv.get("seeds.basis", std::int64_t{3}));

    c.domain.state_lo(0) = kv.get("domain.e_y_lo", c.domain.state_lo(0));
    c.domain.state_hi(0) = kv.get("domain.e_y_hi", c.domain.state_hi(0));
    c.domain.state_lo(1) = kv.get("domain.e_psi_lo", c.domain.state_lo(1));
    c.domain.state_hi(1) = kv.get("domain.e_psi_hi", c.domain.state_hi(1));
    c.domain.input_lo(0) = kv.get("domain.delta_lo", c.domain.input_lo(0));
    c.domain.input_hi(0) = kv.get("domain.delta_hi", c.domain.input_hi(0));

    c.plant.speed = kv.get("plant.speed", c.plant.speed);
    c.plant.wheelbase = kv.get("plant.wheelbase", c.plant.wheelbase);
    c.plant.dt = kv.get("plant.dt", c.plant.dt);
    c.plant.kappa_max = kv.get("plant.kappa_max", c.plant.kappa_max);

    c.scenario.duration = kv.get("scenario.duration", c.scenario.duration);
    c.scenario.slalom_period = kv.get("scenario.slalom_period", c.scenario.slalom_period);
    c.scenario.amplitude_scale = kv.get("scenario.amplitude_scale", c.scenario.amplitude_scale);
    c.scenario.noise_bound = kv.get("scenario.noise_bound", c.scenario.noise_bound);
    c.scenario.noise_seed = static_cast<std::uint64_t>(kv.get("seeds.noise", std::int64_t{0}));

    c.horizon = static_cast<int>(kv.get("mpc.horizon", std::int64_t{c.horizon}));
    c.Q(0, 0) = kv.get("mpc.q_e_y", c.Q(0, 0));
    c.Q(1, 1) = kv.get("mpc.q_e_psi", c.Q(1, 1));
    c.R(0, 0) = kv.get("mpc.r_delta", c.R(0, 0));
    c.state_bound(0) = kv.get("mpc.e_y_bound", c.state_bound(0));
    c.state_bound(1) = kv.get("mpc.e_psi_bound", c.state_bound(1));
    c.input_bound(0) = kv.get("mpc.delta_bound", c.input_bound(0));
    c.tube_law = tube_law_from_string(kv.get("mpc.tube_law", std::string(to_string(c.tube_law))));

    c.out_dir = kv.get("output.dir", c.out_dir);
    c.validate();
    return c;
  }

  void validate() const {
    if (feature_count < 1) throw std::invalid_argument("config: features must be >= 1");
    if (length_scale != "median" && !(std::stod(length_scale) > 0.0))
      throw std::invalid_argument("config: length_scale must be 'median' or > 0");
    if (lambda <= 0.0) throw std::invalid_argument("config: lambda must be > 0");
    if (beta <= 1.0) throw std::invalid_argument("config: beta must be > 1");
    if (train_count < 1 || validation_count < 1)
      throw std::invalid_argument("config: sample counts must be >= 1");
    if (train_seed == validation_seed)
      throw std::invalid_argument("config: train and validation seeds must differ");
    if (horizon < 1) throw std::invalid_argument("config: horizon must be >= 1");
    domain.validate();
    plant.validate();
    scenario.validate();
    // The MPC constraint box must sit strictly inside the training domain.
    if (state_bound(0) >= domain.state_hi(0) || -state_bound(0) <= domain.state_lo(0) ||
        state_bound(1) >= domain.state_hi(1) || -state_bound(1) <= domain.state_lo(1) ||
        input_bound(0) >= domain.input_hi(0) || -input_bound(0) <= domain.input_lo(0))
      throw std::invalid_argument("config: MPC constraint box must lie inside training domain");
  }
};

}  // namespace rtmpc
