// Copyright (c) 2026 The dfq Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dfq/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dfq/errors.hpp"

namespace dfq {
namespace {

constexpr char kMagic[8] = {'D', 'F', 'Q', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void pod(T v) {
    raw(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void raw(void* p, std::size_t n) {
    if (n > b_.size() - pos_) fail(Errc::MalformedFile, "checkpoint is truncated");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > b_.size() - pos_) fail(Errc::MalformedFile, "checkpoint is truncated");
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> w{std::istream_iterator<std::string>(is), std::istream_iterator<std::string>()};
  return w;
}

int to_int(const std::string& s) {
  try {
    return std::stoi(s);
  } catch (const std::exception&) {
    fail(Errc::MalformedFile, "bad integer '" + s + "' in checkpoint descriptor");
  }
}

void copy_into(const Container& c, const std::string& name, Tensor& dst) {
  const Tensor& src = c.get(name);
  if (src.shape() != dst.shape()) {
    fail(Errc::MalformedFile, "array '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                                  shape_str(dst.shape()));
  }
  dst = src;
}

}  // namespace

bool Container::has(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& Container::get(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  fail(Errc::MalformedFile, "checkpoint has no array '" + name + "'");
}

std::vector<std::uint8_t> Container::to_bytes() const {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kCheckpointVersion);
  w.str(descriptor);
  w.str(manifest);
  w.pod(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    w.str(name);
    w.pod(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.pod(static_cast<std::uint64_t>(d));
    w.raw(t.data(), t.size() * sizeof(double));
  }
  return w.take();
}

Container Container::from_bytes(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) fail(Errc::MalformedFile, "not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(Errc::MalformedFile, "unsupported checkpoint version " + std::to_string(version));
  }
  Container c;
  c.descriptor = r.str();
  c.manifest = r.str();
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) fail(Errc::MalformedFile, "array '" + name + "' has implausible rank");
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.pod<std::uint64_t>();
      if (d > (1u << 28)) fail(Errc::MalformedFile, "array '" + name + "' has implausible dimension");
      shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    if (numel > bytes.size()) fail(Errc::MalformedFile, "checkpoint is truncated");
    std::vector<double> data(numel);
    r.raw(data.data(), numel * sizeof(double));
    c.arrays.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) fail(Errc::MalformedFile, "trailing bytes after checkpoint payload");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = to_bytes();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::Io, "short write to " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingArtifact, "checkpoint not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

std::string classifier_descriptor(const ArchSpec& a) {
  return "classifier " + a.name + " " + std::to_string(a.in_channels) + " " + std::to_string(a.image_size) + " " +
         std::to_string(a.num_classes);
}

std::string generator_descriptor(const GeneratorSpec& s) {
  return "generator " + s.name + " " + std::to_string(s.num_classes) + " " + std::to_string(s.out_channels) + " " +
         std::to_string(s.image_size());
}

ArchSpec parse_classifier_descriptor(const std::string& d) {
  const auto w = split_words(d);
  if (w.size() != 5 || w[0] != "classifier") fail(Errc::MalformedFile, "bad classifier descriptor '" + d + "'");
  return make_arch(w[1], to_int(w[2]), to_int(w[3]), to_int(w[4]));
}

GeneratorSpec parse_generator_descriptor(const std::string& d) {
  const auto w = split_words(d);
  if (w.size() != 5 || w[0] != "generator") fail(Errc::MalformedFile, "bad generator descriptor '" + d + "'");
  return make_generator_spec(w[1], to_int(w[2]), to_int(w[3]), to_int(w[4]));
}

void store_classifier(Container& c, Classifier& m, const std::string& prefix) {
  for (auto& [name, t] : m.named_arrays()) c.put(prefix + name, *t);
}

Classifier restore_classifier(const Container& c, const std::string& descriptor, const std::string& prefix) {
  Classifier m = Classifier::build(parse_classifier_descriptor(descriptor), 0);
  for (auto& [name, t] : m.named_arrays()) copy_into(c, prefix + name, *t);
  for (int l = 0; l < m.num_bn_layers(); ++l) m.bn(l).validate();
  return m;
}

void store_generator(Container& c, Generator& g, const std::string& prefix) {
  for (auto& [name, t] : g.named_arrays()) c.put(prefix + name, *t);
}

Generator restore_generator(const Container& c, const std::string& descriptor, const std::string& prefix) {
  Generator g = Generator::build(parse_generator_descriptor(descriptor), 0);
  for (auto& [name, t] : g.named_arrays()) copy_into(c, prefix + name, *t);
  return g;
}

void store_fake_quant(Container& c, FakeQuantModel& q, const std::string& prefix) {
  store_classifier(c, q.network(), prefix);
  const QuantConfig& cfg = q.config();
  c.put(prefix + "quant.config", Tensor({3}, {static_cast<double>(cfg.weight_bits), static_cast<double>(cfg.act_bits),
                                              cfg.range_momentum}));
  c.put(prefix + "quant.weight_alpha",
        Tensor({static_cast<int>(q.weight_alpha().size())}, std::vector<double>(q.weight_alpha())));
  const int n = static_cast<int>(q.trackers().size());
  Tensor tr({n, 3});
  for (int i = 0; i < n; ++i) {
    const RangeTracker& t = q.trackers()[static_cast<std::size_t>(i)];
    tr[static_cast<std::size_t>(3 * i)] = t.running_max();
    tr[static_cast<std::size_t>(3 * i + 1)] = t.initialized() ? 1.0 : 0.0;
    tr[static_cast<std::size_t>(3 * i + 2)] = t.frozen() ? 1.0 : 0.0;
  }
  c.put(prefix + "quant.trackers", std::move(tr));
}

FakeQuantModel restore_fake_quant(const Container& c, const std::string& descriptor, const std::string& prefix) {
  Classifier net = restore_classifier(c, descriptor, prefix);
  const Tensor& cfg_t = c.get(prefix + "quant.config");
  if (cfg_t.size() != 3) fail(Errc::MalformedFile, "bad quant.config array");
  QuantConfig cfg{static_cast<int>(cfg_t[0]), static_cast<int>(cfg_t[1]), cfg_t[2]};
  cfg.validate();
  const Tensor& wa = c.get(prefix + "quant.weight_alpha");
  const Tensor& tr = c.get(prefix + "quant.trackers");
  if (tr.rank() != 2 || tr.dim(1) != 3) fail(Errc::MalformedFile, "bad quant.trackers array");
  std::vector<RangeTracker> trackers;
  for (int i = 0; i < tr.dim(0); ++i) {
    trackers.push_back(RangeTracker::restore(cfg.range_momentum, tr[static_cast<std::size_t>(3 * i)],
                                             tr[static_cast<std::size_t>(3 * i + 1)] != 0.0,
                                             tr[static_cast<std::size_t>(3 * i + 2)] != 0.0));
  }
  return FakeQuantModel::restore(std::move(net), cfg, std::vector<double>(wa.storage()), std::move(trackers));
}

void save_classifier(const std::filesystem::path& path, Classifier& m, const std::string& manifest) {
  Container c;
  c.descriptor = classifier_descriptor(m.arch());
  c.manifest = manifest;
  store_classifier(c, m);
  c.save(path);
}

Classifier load_classifier(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  return restore_classifier(c, c.descriptor);
}

}  // namespace dfq
