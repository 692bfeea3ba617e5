#include "gtnp/taskgen.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <numbers>

#include "gtnp/errors.hpp"

namespace gtnp {

static_assert(std::endian::native == std::endian::little, "task files assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'T', 'N', 'P', 'T', 'A', 'S', 'K'};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Solves L z = b in place for lower-triangular row-major L.
void forward_solve(const std::vector<double>& L, std::size_t n, double* b) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    const double* row = L.data() + i * n;
    for (std::size_t k = 0; k < i; ++k) s -= row[k] * b[k];
    b[i] = s / row[i];
  }
}

// Gaussian conditioning with a precomputed joint covariance.
GPPosterior condition(std::vector<double> kcc, std::size_t nc, const std::vector<double>& kct, std::size_t nt,
                      const std::vector<double>& prior_var, const std::vector<double>& yc,
                      const std::vector<double>& yt) {
  GPPosterior post;
  post.mean.assign(nt, 0.0);
  post.var = prior_var;
  if (nc > 0) {
    cholesky_with_jitter(kcc, nc);
    std::vector<double> alpha(yc);
    forward_solve(kcc, nc, alpha.data());
    std::vector<double> v(nc);
    for (std::size_t t = 0; t < nt; ++t) {
      for (std::size_t i = 0; i < nc; ++i) v[i] = kct[i * nt + t];
      forward_solve(kcc, nc, v.data());
      double m = 0, q = 0;
      for (std::size_t i = 0; i < nc; ++i) {
        m += v[i] * alpha[i];
        q += v[i] * v[i];
      }
      post.mean[t] = m;
      post.var[t] = prior_var[t] - q;
    }
  }
  post.loglik = gaussian_loglik(yt, post.mean, post.var);
  return post;
}

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void put_doubles(const std::vector<double>& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(double));
  }
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, data_ + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::vector<double> get_doubles(std::size_t n) {
    if (n > (size_ - pos_) / sizeof(double)) throw FormatError("task record truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), data_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw FormatError("task record truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void put_points(ByteWriter& w, const PointSet& p) {
  w.put(static_cast<std::uint32_t>(p.size()));
  w.put(static_cast<std::uint32_t>(p.dx));
  w.put(static_cast<std::uint32_t>(p.dy));
  w.put_doubles(p.x);
  w.put_doubles(p.y);
}

PointSet get_points(ByteReader& r) {
  PointSet p;
  const auto n = r.get<std::uint32_t>();
  p.dx = r.get<std::uint32_t>();
  p.dy = r.get<std::uint32_t>();
  p.x = r.get_doubles(std::size_t(n) * p.dx);
  p.y = r.get_doubles(std::size_t(n) * p.dy);
  return p;
}

nlohmann::json read_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError("'" + path + "' is not a task file");
  }
  std::uint32_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), 4)) throw FormatError("'" + path + "': truncated header");
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError("'" + path + "': truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': bad header: " + e.what());
  }
  const int version = header.value("schema_version", -1);
  if (version != kTaskSchemaVersion) {
    throw FormatError("'" + path + "': schema version " + std::to_string(version) + ", expected " +
                      std::to_string(kTaskSchemaVersion));
  }
  return header;
}

}  // namespace

void PointSet::validate() const {
  if (dx == 0 || dy == 0) throw ContractError("point set needs positive input and output widths");
  if (x.size() % dx != 0 || y.size() != size() * dy) throw ContractError("point set arrays disagree on size");
}

std::size_t Task::context_size() const {
  std::size_t n = 0;
  for (const auto& s : sources) n += s.size();
  return n;
}

void Task::validate() const {
  for (const auto& s : sources) s.validate();
  target.validate();
  if (target.size() == 0) throw ContractError("task needs at least one target");
}

void GPTaskConfig::validate() const {
  if (dx == 0) throw ConfigError("GP task input dimension must be positive");
  if (!(lo < hi)) throw ConfigError("GP task extent must satisfy lo < hi");
  if (!(lengthscale > 0)) throw ConfigError("GP lengthscale must be positive");
  if (noise < 0) throw ConfigError("GP noise must be non-negative");
  if (!(variance > 0)) throw ConfigError("GP kernel variance must be positive");
  if (nc_min > nc_max) throw ConfigError("GP task needs nc_min <= nc_max");
  if (nt == 0) throw ConfigError("GP task needs at least one target");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index);
}

double se_kernel(const double* a, const double* b, std::size_t dx, double lengthscale, double variance) {
  double r2 = 0;
  for (std::size_t d = 0; d < dx; ++d) r2 += (a[d] - b[d]) * (a[d] - b[d]);
  return variance * std::exp(-0.5 * r2 / (lengthscale * lengthscale));
}

double cholesky_with_jitter(std::vector<double>& a, std::size_t n) {
  const std::vector<double> orig = a;
  for (double jitter = 1e-8; jitter <= 1e-4 * 1.0001; jitter *= 10) {
    a = orig;
    bool ok = true;
    for (std::size_t j = 0; j < n && ok; ++j) {
      double* rj = a.data() + j * n;
      double s = rj[j] + jitter;
      for (std::size_t k = 0; k < j; ++k) s -= rj[k] * rj[k];
      if (!(s > 0)) {
        ok = false;
        break;
      }
      const double ljj = std::sqrt(s);
      rj[j] = ljj;
      for (std::size_t i = j + 1; i < n; ++i) {
        double* ri = a.data() + i * n;
        double t = ri[j];
        for (std::size_t k = 0; k < j; ++k) t -= ri[k] * rj[k];
        ri[j] = t / ljj;
      }
    }
    if (ok) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
      return jitter;
    }
  }
  throw NumericError("Cholesky failed after jitter escalation to 1e-4");
}

std::vector<double> sample_gp_function(const std::vector<double>& xs, std::size_t dx, double lengthscale,
                                       double variance, std::mt19937_64& rng) {
  const std::size_t n = xs.size() / dx;
  std::map<std::vector<double>, std::size_t> unique_index;
  std::vector<std::size_t> slot(n);
  std::vector<double> ux;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> key(xs.begin() + i * dx, xs.begin() + (i + 1) * dx);
    auto [it, inserted] = unique_index.emplace(key, unique_index.size());
    if (inserted) ux.insert(ux.end(), key.begin(), key.end());
    slot[i] = it->second;
  }
  const std::size_t u = unique_index.size();
  std::vector<double> K(u * u);
  for (std::size_t i = 0; i < u; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      K[i * u + j] = K[j * u + i] = se_kernel(&ux[i * dx], &ux[j * dx], dx, lengthscale, variance);
  cholesky_with_jitter(K, u);
  std::normal_distribution<double> normal;
  std::vector<double> eps(u);
  for (auto& e : eps) e = normal(rng);
  std::vector<double> fu(u, 0.0);
  for (std::size_t i = 0; i < u; ++i)
    for (std::size_t k = 0; k <= i; ++k) fu[i] += K[i * u + k] * eps[k];
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = fu[slot[i]];
  return f;
}

Task sample_gp_task(const GPTaskConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t nc = std::uniform_int_distribution<std::size_t>(cfg.nc_min, cfg.nc_max)(rng);
  const std::size_t n = nc + cfg.nt;
  if (n > cfg.exact_cap) {
    throw ContractError("GP task with " + std::to_string(n) + " points exceeds the exact-sampling cap " +
                        std::to_string(cfg.exact_cap));
  }
  std::uniform_real_distribution<double> unif(cfg.lo, cfg.hi);
  std::vector<double> xs(n * cfg.dx);
  for (auto& x : xs) x = unif(rng);
  const auto f = sample_gp_function(xs, cfg.dx, cfg.lengthscale, cfg.variance, rng);
  std::normal_distribution<double> normal;
  Task task;
  task.meta = {"gp_se", seed, cfg.lengthscale, cfg.noise};
  PointSet ctx{cfg.dx, 1, {}, {}}, tgt{cfg.dx, 1, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double y = f[i] + cfg.noise * normal(rng);
    PointSet& dst = i < nc ? ctx : tgt;
    dst.x.insert(dst.x.end(), xs.begin() + i * cfg.dx, xs.begin() + (i + 1) * cfg.dx);
    dst.y.push_back(y);
  }
  task.sources.push_back(std::move(ctx));
  task.target = std::move(tgt);
  return task;
}

double gaussian_loglik(const std::vector<double>& y, const std::vector<double>& mean, const std::vector<double>& var) {
  if (y.size() != mean.size() || y.size() != var.size() || y.empty()) {
    throw ContractError("gaussian_loglik: size mismatch");
  }
  double total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(var[i] > 0)) throw ContractError("gaussian_loglik: non-positive variance");
    const double r = y[i] - mean[i];
    total += -0.5 * std::log(2 * std::numbers::pi * var[i]) - 0.5 * r * r / var[i];
  }
  return total / double(y.size());
}

GPPosterior gp_posterior_oracle(const Task& task, double lengthscale, double noise, double variance) {
  if (task.sources.size() != 1) throw ContractError("gp_posterior_oracle: expects a single-source task");
  const PointSet& c = task.sources[0];
  const PointSet& t = task.target;
  if (c.dy != 1 || t.dy != 1 || c.dx != t.dx) throw ContractError("gp_posterior_oracle: expects scalar outputs");
  const std::size_t dx = c.dx, nc = c.size(), nt = t.size();
  std::vector<double> kcc(nc * nc), kct(nc * nt);
  for (std::size_t i = 0; i < nc; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      kcc[i * nc + j] = kcc[j * nc + i] = se_kernel(&c.x[i * dx], &c.x[j * dx], dx, lengthscale, variance);
    }
    kcc[i * nc + i] += noise * noise;
    for (std::size_t j = 0; j < nt; ++j) kct[i * nt + j] = se_kernel(&c.x[i * dx], &t.x[j * dx], dx, lengthscale, variance);
  }
  std::vector<double> prior(nt, variance + noise * noise);
  return condition(std::move(kcc), nc, kct, nt, prior, c.y, t.y);
}

GPPosterior gp_posterior_oracle(const Task& task) {
  return gp_posterior_oracle(task, task.meta.lengthscale, task.meta.noise);
}

void MultiSourceConfig::validate() const {
  if (!(lo < hi)) throw ConfigError("multi-source extent must satisfy lo < hi");
  if (grid_points_a == 0) throw ConfigError("source A needs at least one grid point");
  if (nb_min > nb_max) throw ConfigError("multi-source task needs nb_min <= nb_max");
  if (nt == 0) throw ConfigError("multi-source task needs targets");
  if (!(lengthscale > 0)) throw ConfigError("multi-source lengthscale must be positive");
  if (correlation < 0 || correlation > 1) throw ConfigError("cross-source correlation must lie in [0, 1]");
  if (noise_a < 0 || noise_b < 0) throw ConfigError("noise must be non-negative");
}

std::pair<std::vector<double>, std::vector<double>> sample_correlated_outputs(const std::vector<double>& xs,
                                                                              const MultiSourceConfig& cfg,
                                                                              std::mt19937_64& rng) {
  const auto g = sample_gp_function(xs, 1, cfg.lengthscale, cfg.variance, rng);
  const auto ha = sample_gp_function(xs, 1, cfg.lengthscale, cfg.variance, rng);
  const auto hb = sample_gp_function(xs, 1, cfg.lengthscale, cfg.variance, rng);
  const double a = std::sqrt(cfg.correlation), b = std::sqrt(1.0 - cfg.correlation);
  std::vector<double> fa(xs.size()), fb(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    fa[i] = a * g[i] + b * ha[i];
    fb[i] = a * g[i] + b * hb[i];
  }
  return {fa, fb};
}

Task sample_multisource_task(const MultiSourceConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t na = cfg.grid_points_a;
  const std::size_t nb = std::uniform_int_distribution<std::size_t>(cfg.nb_min, cfg.nb_max)(rng);
  const std::size_t nt = cfg.nt;
  std::vector<double> xs;
  const double h = (cfg.hi - cfg.lo) / double(na);
  for (std::size_t i = 0; i < na; ++i) xs.push_back(cfg.lo + (double(i) + 0.5) * h);
  std::uniform_real_distribution<double> unif(cfg.lo, cfg.hi);
  for (std::size_t i = 0; i < nb + nt; ++i) xs.push_back(unif(rng));
  auto [fa, fb] = sample_correlated_outputs(xs, cfg, rng);
  std::normal_distribution<double> normal;
  Task task;
  task.meta = {"multisource", seed, cfg.lengthscale, cfg.noise_b};
  PointSet a{1, 1, {}, {}}, b{1, 1, {}, {}}, t{1, 1, {}, {}};
  for (std::size_t i = 0; i < na; ++i) {
    a.x.push_back(xs[i]);
    a.y.push_back(fa[i] + cfg.noise_a * normal(rng));
  }
  for (std::size_t i = na; i < xs.size(); ++i) {
    PointSet& dst = i < na + nb ? b : t;
    dst.x.push_back(xs[i]);
    dst.y.push_back(fb[i] + cfg.noise_b * normal(rng));
  }
  task.sources = {std::move(a), std::move(b)};
  task.target = std::move(t);
  return task;
}

GPPosterior multisource_posterior_oracle(const Task& task, const MultiSourceConfig& cfg, bool use_a, bool use_b) {
  if (task.sources.size() != 2) throw ContractError("multisource_posterior_oracle: expects two sources");
  struct Obs {
    double x, y, noise;
    int source;
  };
  std::vector<Obs> obs;
  if (use_a)
    for (std::size_t i = 0; i < task.sources[0].size(); ++i)
      obs.push_back({task.sources[0].x[i], task.sources[0].y[i], cfg.noise_a, 0});
  if (use_b)
    for (std::size_t i = 0; i < task.sources[1].size(); ++i)
      obs.push_back({task.sources[1].x[i], task.sources[1].y[i], cfg.noise_b, 1});
  const std::size_t nc = obs.size(), nt = task.target.size();
  auto cov = [&](double x1, int s1, double x2, int s2) {
    const double k = se_kernel(&x1, &x2, 1, cfg.lengthscale, cfg.variance);
    return s1 == s2 ? k : cfg.correlation * k;
  };
  std::vector<double> kcc(nc * nc), kct(nc * nt), yc(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    yc[i] = obs[i].y;
    for (std::size_t j = 0; j <= i; ++j) kcc[i * nc + j] = kcc[j * nc + i] = cov(obs[i].x, obs[i].source, obs[j].x, obs[j].source);
    kcc[i * nc + i] += obs[i].noise * obs[i].noise;
    for (std::size_t t = 0; t < nt; ++t) kct[i * nt + t] = cov(obs[i].x, obs[i].source, task.target.x[t], 1);
  }
  std::vector<double> prior(nt, cfg.variance + cfg.noise_b * cfg.noise_b);
  return condition(std::move(kcc), nc, kct, nt, prior, yc, task.target.y);
}

std::vector<std::uint8_t> encode_task(const Task& task) {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(task.sources.size()));
  for (const auto& s : task.sources) put_points(w, s);
  put_points(w, task.target);
  w.put(static_cast<std::uint32_t>(task.meta.generator.size()));
  w.bytes.insert(w.bytes.end(), task.meta.generator.begin(), task.meta.generator.end());
  w.put(task.meta.seed);
  w.put(task.meta.lengthscale);
  w.put(task.meta.noise);
  return std::move(w.bytes);
}

Task decode_task(const std::uint8_t* data, std::size_t size) {
  ByteReader r(data, size);
  Task task;
  const auto ns = r.get<std::uint32_t>();
  for (std::uint32_t s = 0; s < ns; ++s) task.sources.push_back(get_points(r));
  task.target = get_points(r);
  task.meta.generator = r.get_string(r.get<std::uint32_t>());
  task.meta.seed = r.get<std::uint64_t>();
  task.meta.lengthscale = r.get<double>();
  task.meta.noise = r.get<double>();
  if (!r.done()) throw FormatError("task record has trailing bytes");
  return task;
}

void write_tasks(const std::string& path, const std::vector<Task>& tasks, const nlohmann::json& generator) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write task file '" + path + "'");
  nlohmann::json header{{"schema_version", kTaskSchemaVersion}, {"generator", generator}, {"count", tasks.size()}};
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), len);
  for (const auto& t : tasks) {
    const auto bytes = encode_task(t);
    const auto n = static_cast<std::uint64_t>(bytes.size());
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw IoError("failed writing task file '" + path + "'");
}

TaskReader::TaskReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open task file '" + path + "'");
  header_ = read_header(in_, path);
}

bool TaskReader::next(Task& task) {
  std::uint64_t n = 0;
  in_.read(reinterpret_cast<char*>(&n), 8);
  if (in_.gcount() == 0 && in_.eof()) return false;
  if (in_.gcount() != 8) throw FormatError("'" + path_ + "': truncated record length");
  std::vector<std::uint8_t> buf(n);
  if (!in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) {
    throw FormatError("'" + path_ + "': truncated record");
  }
  task = decode_task(buf.data(), buf.size());
  return true;
}

std::vector<Task> read_tasks(const std::string& path, nlohmann::json* header) {
  TaskReader reader(path);
  if (header) *header = reader.header();
  std::vector<Task> tasks;
  Task t;
  while (reader.next(t)) tasks.push_back(std::move(t));
  if (reader.header().contains("count") && reader.header()["count"].get<std::size_t>() != tasks.size()) {
    throw FormatError("'" + path + "': expected " + reader.header()["count"].dump() + " tasks, found " +
                      std::to_string(tasks.size()));
  }
  return tasks;
}

void export_tasks_csv(const std::string& path, const std::vector<Task>& tasks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  std::size_t dx = 1, dy = 1;
  if (!tasks.empty()) {
    dx = tasks[0].target.dx;
    dy = tasks[0].target.dy;
  }
  out << "task_id,role,source_id";
  for (std::size_t d = 0; d < dx; ++d) out << ",x" << d;
  for (std::size_t d = 0; d < dy; ++d) out << ",y" << d;
  out << '\n';
  out.precision(17);
  auto rows = [&](std::size_t id, const char* role, long source, const PointSet& p) {
    if (p.dx != dx || p.dy != dy) throw ContractError("export_tasks_csv: tasks disagree on point widths");
    for (std::size_t i = 0; i < p.size(); ++i) {
      out << id << ',' << role << ',' << source;
      for (std::size_t d = 0; d < dx; ++d) out << ',' << p.x[i * dx + d];
      for (std::size_t d = 0; d < dy; ++d) out << ',' << p.y[i * dy + d];
      out << '\n';
    }
  };
  for (std::size_t id = 0; id < tasks.size(); ++id) {
    for (std::size_t s = 0; s < tasks[id].sources.size(); ++s) rows(id, "context", long(s), tasks[id].sources[s]);
    rows(id, "target", -1, tasks[id].target);
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace gtnp
