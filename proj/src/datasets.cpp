#include "mine/datasets.hpp"

#include "mine/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <exception>
#include <numeric>

namespace mine::datasets {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary records assume a little-endian host");

Split split_622(std::size_t n, std::uint64_t seed) {
  require(n >= 5, ErrorKind::InvalidInput, "split_622 needs at least 5 records");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(Rng::mix(seed ^ 0x5EED5B11ULL));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  const std::size_t n_train = (6 * n) / 10;
  const std::size_t n_val = (2 * n) / 10;
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

RowMatrix Dataset::feature_rows(const std::vector<std::size_t>& idx) const {
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), features.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = features.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

RowMatrix Dataset::target_rows(const std::vector<std::size_t>& idx) const {
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), targets.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = targets.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

json Normalization::to_json() const {
  return {{"feature_min", io::to_json(feature_min)},
          {"feature_max", io::to_json(feature_max)},
          {"target_scale", target_scale}};
}

Normalization Normalization::from_json(const json& j) {
  Normalization n;
  n.feature_min = io::vector_from_json(j.at("feature_min"));
  n.feature_max = io::vector_from_json(j.at("feature_max"));
  n.target_scale = j.at("target_scale").get<double>();
  return n;
}

Normalization Normalization::fit(const Dataset& ds, const std::vector<std::size_t>& idx) {
  require(!idx.empty(), ErrorKind::InvalidInput, "normalization needs at least one row");
  const RowMatrix f = ds.feature_rows(idx);
  const RowMatrix t = ds.target_rows(idx);
  Normalization n;
  n.feature_min = f.colwise().minCoeff().transpose();
  n.feature_max = f.colwise().maxCoeff().transpose();
  n.target_scale = t.size() > 0 ? t.cwiseAbs().maxCoeff() : 1.0;
  if (!(n.target_scale > 0.0)) n.target_scale = 1.0;
  return n;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

namespace {

json split_json(const Split& s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

Split split_from_json(const json& j) {
  Split s;
  s.train = j.at("train").get<std::vector<std::size_t>>();
  s.val = j.at("val").get<std::vector<std::size_t>>();
  s.test = j.at("test").get<std::vector<std::size_t>>();
  return s;
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
  require(pos + sizeof(T) <= in.size(), ErrorKind::InvalidInput, "dataset file truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto n = ds.features.rows();
  require(ds.targets.rows() == n, ErrorKind::Shape, "dataset features/targets row mismatch");
  require(ds.features.cols() <= 0xFFFF, ErrorKind::Capacity, "too many feature columns");
  std::string bytes = "MINE";
  put<std::uint16_t>(bytes, kFormatVersion);
  put<std::uint16_t>(bytes, static_cast<std::uint16_t>(ds.features.cols()));
  bytes.reserve(bytes.size() + static_cast<std::size_t>(n * (ds.features.cols() + ds.targets.cols())) * 8);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) put<double>(bytes, ds.features(i, j));
    for (Eigen::Index j = 0; j < ds.targets.cols(); ++j) put<double>(bytes, ds.targets(i, j));
  }
  io::write_file(path, bytes);
  const auto hash = io::sha256_hex(bytes);

  json side = {{"schema_version", io::kSchemaVersion},
               {"kind", ds.kind},
               {"rows", n},
               {"feature_count", ds.features.cols()},
               {"target_count", ds.targets.cols()},
               {"feature_names", ds.feature_names},
               {"target_names", ds.target_names},
               {"split", split_json(ds.split)},
               {"chain_rows", ds.chain_rows},
               {"skipped", ds.skipped},
               {"seed", ds.seed},
               {"chain_hash", ds.chain_hash},
               {"simulator", ds.simulator},
               {"meta", ds.meta},
               {"sha256", hash}};
  io::write_json(sidecar_path(path), side);
  return hash;
}

Dataset load_dataset(const std::filesystem::path& path,
                     const std::optional<std::string>& expected_chain_hash) {
  const json side = io::read_json(sidecar_path(path));
  const std::string bytes = io::read_file(path);
  if (io::sha256_hex(bytes) != side.at("sha256").get<std::string>()) {
    throw Error(ErrorKind::Provenance, "dataset " + path.string() + " does not match its sidecar hash");
  }
  if (expected_chain_hash && side.at("chain_hash").get<std::string>() != *expected_chain_hash) {
    throw Error(ErrorKind::Provenance,
                "dataset " + path.string() + " was generated from a different chain");
  }
  require(bytes.size() >= 8 && bytes.compare(0, 4, "MINE") == 0, ErrorKind::InvalidInput,
          "not a MINE dataset file");
  std::size_t pos = 4;
  const auto version = get<std::uint16_t>(bytes, pos);
  require(version == kFormatVersion, ErrorKind::InvalidInput,
          "unsupported dataset version " + std::to_string(version));
  const auto f = static_cast<Eigen::Index>(get<std::uint16_t>(bytes, pos));
  const auto k = side.at("target_count").get<Eigen::Index>();
  const auto n = side.at("rows").get<Eigen::Index>();
  require(f == side.at("feature_count").get<Eigen::Index>(), ErrorKind::InvalidInput,
          "feature count disagrees with sidecar");
  require(bytes.size() == 8 + static_cast<std::size_t>(n * (f + k)) * 8, ErrorKind::InvalidInput,
          "dataset length disagrees with sidecar");

  Dataset ds;
  ds.features.resize(n, f);
  ds.targets.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < f; ++j) ds.features(i, j) = get<double>(bytes, pos);
    for (Eigen::Index j = 0; j < k; ++j) ds.targets(i, j) = get<double>(bytes, pos);
  }
  ds.kind = side.at("kind").get<std::string>();
  ds.feature_names = side.at("feature_names").get<std::vector<std::string>>();
  ds.target_names = side.at("target_names").get<std::vector<std::string>>();
  ds.split = split_from_json(side.at("split"));
  ds.chain_rows = side.at("chain_rows").get<std::vector<std::size_t>>();
  ds.skipped = side.at("skipped").get<std::size_t>();
  ds.seed = side.at("seed").get<std::uint64_t>();
  ds.chain_hash = side.at("chain_hash").get<std::string>();
  ds.simulator = side.at("simulator").get<std::string>();
  ds.meta = side.at("meta");
  return ds;
}

// ---- generation ----

namespace {

constexpr std::size_t kMaxAttempts = 1000;

bool is_divergence(const Error& e) {
  return e.kind() == ErrorKind::IntegrationDiverged || e.kind() == ErrorKind::NumericDomain;
}

// Runs fn(i) for every row, collecting exceptions so none escape a parallel
// region; the lowest failing row is reported.
template <class Fn>
void for_rows(std::size_t n, bool parallel, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void check_skips(std::size_t skipped, std::size_t n) {
  if (n > 0 && static_cast<double>(skipped) > kMaxSkipFraction * static_cast<double>(n)) {
    throw Error(ErrorKind::DataQuality, std::to_string(skipped) + " of " + std::to_string(n) +
                                            " records diverged and were resampled (limit 1%)");
  }
}

Dataset forward_impl(const RowMatrix& posterior, const InitialStateSampler& x0_sampler,
                     const TrajectorySimulator& simulator, const ForwardSpec& spec, bool parallel) {
  require(posterior.rows() >= 1, ErrorKind::InvalidInput, "posterior sample is empty");
  const auto n = spec.n;
  const auto n_post = static_cast<std::uint64_t>(posterior.rows());
  std::vector<Vector> x0s(n);
  std::vector<RowMatrix> trajs(n);
  std::vector<std::size_t> rows(n), skips(n, 0);

  for_rows(n, parallel, [&](std::size_t i) {
    Rng rng = Rng::stream(spec.seed, i);
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
      Vector x0 = x0_sampler(rng);
      const auto idx = static_cast<std::size_t>(rng.below(n_post));
      const Vector theta = posterior.row(static_cast<Eigen::Index>(idx)).transpose();
      try {
        RowMatrix traj = simulator(x0, theta);
        if (!traj.allFinite()) throw Error(ErrorKind::IntegrationDiverged, "non-finite trajectory");
        x0s[i] = std::move(x0);
        trajs[i] = std::move(traj);
        rows[i] = idx;
        return;
      } catch (const Error& e) {
        if (!is_divergence(e)) throw;
        ++skips[i];
      }
    }
    throw IndexedError(ErrorKind::DataQuality, i, "no convergent draw within the attempt limit");
  });

  Dataset ds;
  ds.kind = "forward";
  ds.seed = spec.seed;
  ds.chain_hash = spec.chain_hash;
  ds.simulator = spec.simulator_id;
  ds.skipped = std::accumulate(skips.begin(), skips.end(), std::size_t{0});
  check_skips(ds.skipped, n);
  ds.chain_rows = rows;

  const auto& x0_names = spec.x0_names.empty() ? spec.state_names : spec.x0_names;
  for (const auto& s : x0_names) ds.feature_names.push_back("x0_" + s);
  for (const auto& s : spec.theta_names) ds.feature_names.push_back(s);

  const Eigen::Index dx = n > 0 ? x0s[0].size() : static_cast<Eigen::Index>(x0_names.size());
  const Eigen::Index S = n > 0 ? trajs[0].rows() : 0;
  const Eigen::Index N = n > 0 ? trajs[0].cols() : static_cast<Eigen::Index>(spec.state_names.size());
  ds.features.resize(static_cast<Eigen::Index>(n), dx + posterior.cols());
  ds.targets.resize(static_cast<Eigen::Index>(n), S * N);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    require(x0s[i].size() == dx && trajs[i].rows() == S && trajs[i].cols() == N, ErrorKind::Shape,
            "simulator returned inconsistent shapes");
    ds.features.row(r).head(dx) = x0s[i].transpose();
    ds.features.row(r).tail(posterior.cols()) = posterior.row(static_cast<Eigen::Index>(rows[i]));
    ds.targets.row(r) = Eigen::Map<const Eigen::RowVectorXd>(trajs[i].data(), S * N);
  }
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index k = 0; k < N; ++k)
      ds.target_names.push_back((static_cast<std::size_t>(k) < spec.state_names.size()
                                     ? spec.state_names[static_cast<std::size_t>(k)]
                                     : "y" + std::to_string(k)) +
                                "@" + std::to_string(s));

  ds.meta["grid"] = spec.grid;
  ds.meta["grid"]["rows"] = S;
  ds.meta["state_dim"] = N;
  ds.meta["x0_dim"] = dx;
  ds.meta["theta_dim"] = posterior.cols();
  ds.meta["posterior_rows"] = posterior.rows();
  if (n > 0) {
    ds.split = split_622(n, spec.seed);
    ds.meta["normalization"] = Normalization::fit(ds, ds.split.train).to_json();
  }
  return ds;
}

Dataset quantile_impl(const RowMatrix& posterior, const HorizonSimulator& simulator,
                      const QuantileSpec& spec, bool parallel) {
  require(posterior.rows() >= 1, ErrorKind::InvalidInput, "posterior sample is empty");
  require(spec.scenarios >= 1, ErrorKind::Config, "need at least one scenario");
  spec.eta.validate();
  const auto n = spec.n;
  const auto n_post = static_cast<std::uint64_t>(posterior.rows());
  const Eigen::Index f = spec.scenarios + 3;
  RowMatrix features(static_cast<Eigen::Index>(n), f);
  RowMatrix targets(static_cast<Eigen::Index>(n), 1);
  std::vector<std::size_t> rows(n), skips(n, 0), resamples(n, 0);

  for_rows(n, parallel, [&](std::size_t i) {
    Rng rng = Rng::stream(spec.seed, i);
    const int s = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.scenarios)));
    const auto eta = spec.eta.sample(rng);
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
      const double e0 = quantile::sample_e0(eta, rng, &resamples[i]);
      const auto idx = static_cast<std::size_t>(rng.below(n_post));
      const Vector theta = posterior.row(static_cast<Eigen::Index>(idx)).transpose();
      try {
        const double y = simulator(s, e0, theta);
        if (!std::isfinite(y)) throw Error(ErrorKind::IntegrationDiverged, "non-finite horizon value");
        const auto r = static_cast<Eigen::Index>(i);
        features.row(r) = quantile_features(s, spec.scenarios, eta).transpose();
        targets(r, 0) = y;
        rows[i] = idx;
        return;
      } catch (const Error& e) {
        if (!is_divergence(e)) throw;
        ++skips[i];
      }
    }
    throw IndexedError(ErrorKind::DataQuality, i, "no convergent draw within the attempt limit");
  });

  Dataset ds;
  ds.kind = "quantile";
  ds.seed = spec.seed;
  ds.chain_hash = spec.chain_hash;
  ds.simulator = spec.simulator_id;
  ds.skipped = std::accumulate(skips.begin(), skips.end(), std::size_t{0});
  check_skips(ds.skipped, n);
  ds.chain_rows = rows;
  ds.features = std::move(features);
  ds.targets = std::move(targets);
  for (int s = 0; s < spec.scenarios; ++s) {
    ds.feature_names.push_back(
        "scenario_" + (static_cast<std::size_t>(s) < spec.scenario_names.size()
                           ? spec.scenario_names[static_cast<std::size_t>(s)]
                           : std::to_string(s)));
  }
  for (const char* name : {"eta1", "eta2", "eta3"}) ds.feature_names.emplace_back(name);
  ds.target_names = {"y_horizon"};
  ds.meta["scenarios"] = spec.scenarios;
  ds.meta["e0_resamples"] = std::accumulate(resamples.begin(), resamples.end(), std::size_t{0});
  ds.meta["posterior_rows"] = posterior.rows();
  if (n > 0) {
    ds.split = split_622(n, spec.seed);
    ds.meta["normalization"] = Normalization::fit(ds, ds.split.train).to_json();
  }
  return ds;
}

}  // namespace

Dataset generate_forward_dataset(const RowMatrix& posterior, const InitialStateSampler& x0_sampler,
                                 const TrajectorySimulator& simulator, const ForwardSpec& spec) {
  return forward_impl(posterior, x0_sampler, simulator, spec, true);
}

Dataset generate_forward_dataset_serial(const RowMatrix& posterior,
                                        const InitialStateSampler& x0_sampler,
                                        const TrajectorySimulator& simulator,
                                        const ForwardSpec& spec) {
  return forward_impl(posterior, x0_sampler, simulator, spec, false);
}

Dataset generate_quantile_dataset(const RowMatrix& posterior, const HorizonSimulator& simulator,
                                  const QuantileSpec& spec) {
  return quantile_impl(posterior, simulator, spec, true);
}

Dataset generate_quantile_dataset_serial(const RowMatrix& posterior,
                                         const HorizonSimulator& simulator,
                                         const QuantileSpec& spec) {
  return quantile_impl(posterior, simulator, spec, false);
}

Vector quantile_features(int scenario, int scenarios, const quantile::Eta& eta) {
  require(scenario >= 0 && scenario < scenarios, ErrorKind::InvalidInput, "scenario id out of range");
  eta.validate();
  Vector v = Vector::Zero(scenarios + 3);
  v(scenario) = 1.0;
  v(scenarios) = eta.eta1;
  v(scenarios + 1) = eta.eta2;
  v(scenarios + 2) = eta.eta3;
  return v;
}

}  // namespace mine::datasets
