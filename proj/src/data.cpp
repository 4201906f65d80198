#include "hippofuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "hippofuse/nifti.hpp"
#include "hippofuse/rng.hpp"

namespace hippofuse {

using nlohmann::json;

const char* to_string(Diagnosis d) {
  switch (d) {
    case Diagnosis::kAD: return "AD";
    case Diagnosis::kMCI: return "MCI";
    default: return "NC";
  }
}

Diagnosis diagnosis_from_string(std::string_view s) {
  if (s == "AD") return Diagnosis::kAD;
  if (s == "MCI") return Diagnosis::kMCI;
  if (s == "NC") return Diagnosis::kNC;
  throw DataError(msg("unknown diagnosis '", s, "' (expected AD, MCI or NC)"));
}

Modality modality_from_string(std::string_view s) {
  if (s == "sMRI") return Modality::kSmri;
  if (s == "MD-DTI") return Modality::kMdDti;
  throw DataError(msg("unknown modality '", s, "' (expected sMRI or MD-DTI)"));
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

namespace {

json sample_ref_json(const SampleRef& r) {
  return json{{"id", r.sample_id},
              {"subject", r.subject_id},
              {"diagnosis", to_string(r.diagnosis)},
              {"shift", {r.transform.shift[0], r.transform.shift[1], r.transform.shift[2]}},
              {"sigma", r.transform.sigma},
              {"original", r.original}};
}

json class_map_json(const std::map<Diagnosis, std::vector<SampleRef>>& m) {
  json out = json::object();
  for (const auto& [diag, refs] : m) {
    json arr = json::array();
    for (const auto& r : refs) arr.push_back(sample_ref_json(r));
    out[to_string(diag)] = std::move(arr);
  }
  return out;
}

}  // namespace

json AugmentationPlan::to_json() const { return json{{"train", class_map_json(train)}}; }

json TestSets::to_json() const {
  return json{{"test0", class_map_json(test0)},
              {"test1", class_map_json(test1)},
              {"test2", class_map_json(test2)}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.k = j.at("k").get<int>();
  if (j.contains("volume_shape")) {
    const auto& vs = j.at("volume_shape");
    for (std::size_t i = 0; i < 3; ++i) m.volume_shape[i] = vs.at(i).get<std::size_t>();
  }
  for (const auto& [name, c] : j.at("roi_centers").items()) {
    std::array<std::int64_t, 3> center{};
    for (std::size_t i = 0; i < 3; ++i) center[i] = c.at(i).get<std::int64_t>();
    m.roi_centers[name] = center;
  }
  for (const auto& js : j.at("subjects")) {
    SubjectRecord s;
    s.id = js.at("id").get<std::string>();
    s.diagnosis = diagnosis_from_string(js.at("diagnosis").get<std::string>());
    if (js.contains("volumes"))
      for (const auto& [mod, path] : js.at("volumes").items())
        s.volume_paths[modality_from_string(mod)] = path.get<std::string>();
    m.subjects.push_back(std::move(s));
  }
  for (const auto& [diag, ids] : j.at("test_subjects").items()) {
    std::vector<std::string> v;
    for (const auto& id : ids) v.push_back(id.get<std::string>());
    m.test_subjects[diagnosis_from_string(diag)] = std::move(v);
  }
  return m;
}

json DatasetManifest::to_json() const {
  json j;
  j["seed"] = seed;
  j["k"] = k;
  j["volume_shape"] = {volume_shape[0], volume_shape[1], volume_shape[2]};
  json centers = json::object();
  for (const auto& [name, c] : roi_centers) centers[name] = {c[0], c[1], c[2]};
  j["roi_centers"] = std::move(centers);
  json subs = json::array();
  for (const auto& s : subjects) {
    json js{{"id", s.id}, {"diagnosis", to_string(s.diagnosis)}};
    json vols = json::object();
    for (const auto& [mod, path] : s.volume_paths) vols[to_string(mod)] = path;
    js["volumes"] = std::move(vols);
    subs.push_back(std::move(js));
  }
  j["subjects"] = std::move(subs);
  json tests = json::object();
  for (const auto& [diag, ids] : test_subjects) tests[to_string(diag)] = ids;
  j["test_subjects"] = std::move(tests);
  return j;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(msg("cannot open manifest '", path.string(), "'"));
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw IoError(msg("manifest '", path.string(), "': ", e.what()));
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw DataError(msg("manifest '", path.string(), "': ", e.what()));
  }
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(msg("cannot write manifest '", path.string(), "'"));
  out << to_json().dump(2) << "\n";
}

const SubjectRecord& DatasetManifest::subject(const std::string& id) const {
  for (const auto& s : subjects)
    if (s.id == id) return s;
  throw DataError(msg("subject '", id, "' not in manifest"));
}

bool DatasetManifest::is_test_subject(const std::string& id) const {
  for (const auto& [diag, ids] : test_subjects)
    if (std::find(ids.begin(), ids.end(), id) != ids.end()) return true;
  return false;
}

std::vector<const SubjectRecord*> DatasetManifest::train_subjects(Diagnosis d) const {
  std::vector<const SubjectRecord*> out;
  for (const auto& s : subjects)
    if (s.diagnosis == d && !is_test_subject(s.id)) out.push_back(&s);
  return out;
}

std::vector<const SubjectRecord*> DatasetManifest::test_subjects_of(Diagnosis d) const {
  std::vector<const SubjectRecord*> out;
  auto it = test_subjects.find(d);
  if (it == test_subjects.end()) return out;
  for (const auto& id : it->second) out.push_back(&subject(id));
  return out;
}

RoiSpec DatasetManifest::roi(const std::string& name, std::size_t size) const {
  auto it = roi_centers.find(name);
  if (it == roi_centers.end())
    throw DataError(msg("roi_centers has no entry '", name, "'"));
  return RoiSpec{name, it->second, size};
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& s : subjects)
    if (!ids.insert(s.id).second)
      throw DataError(msg("duplicate subject id '", s.id, "'"));
  for (const auto& [diag, list] : test_subjects)
    for (const auto& id : list) {
      const auto& s = subject(id);  // throws if missing
      if (s.diagnosis != diag)
        throw DataError(msg("test subject '", id, "' listed under ", to_string(diag),
                            " but has diagnosis ", to_string(s.diagnosis)));
    }
  if (roi_centers.count("left_hippocampus") == 0 ||
      roi_centers.count("right_hippocampus") == 0)
    throw DataError("roi_centers must define left_hippocampus and right_hippocampus");
}

// ---------------------------------------------------------------------------
// volume store
// ---------------------------------------------------------------------------

void VolumeStore::put(const std::string& subject_id, Modality m, Tensor grid) {
  cache_[{subject_id, static_cast<int>(m)}] = std::move(grid);
}

bool VolumeStore::contains(const std::string& subject_id, Modality m) const {
  return cache_.count({subject_id, static_cast<int>(m)}) > 0;
}

const Tensor& VolumeStore::get(const SubjectRecord& subject, Modality m) {
  const auto key = std::make_pair(subject.id, static_cast<int>(m));
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto pit = subject.volume_paths.find(m);
  if (pit == subject.volume_paths.end())
    throw DataError(msg("subject '", subject.id, "' has no ", to_string(m), " volume"));
  std::filesystem::path p = pit->second;
  if (p.is_relative()) p = base_ / p;
  auto vol = read_nifti(p);
  return cache_.emplace(key, std::move(vol.grid)).first->second;
}

// ---------------------------------------------------------------------------
// ROI extraction and augmentation primitives
// ---------------------------------------------------------------------------

Tensor extract_roi(const Tensor& grid, const RoiSpec& spec, std::array<int, 3> shift) {
  if (grid.rank() != 3)
    throw ShapeError(msg("extract_roi expects a [D,H,W] grid, got ",
                         shape_string(grid.shape())));
  const std::int64_t half = static_cast<std::int64_t>(spec.size / 2);
  std::array<std::size_t, 3> origin{};
  for (std::size_t a = 0; a < 3; ++a) {
    const std::int64_t o = spec.center[a] - half + shift[a];
    if (o < 0 || o + static_cast<std::int64_t>(spec.size) >
                     static_cast<std::int64_t>(grid.extent(a)))
      throw DataError(msg("ROI '", spec.name, "' window [", o, ", ",
                          o + static_cast<std::int64_t>(spec.size), ") outside extent ",
                          grid.extent(a), " on axis ", a));
    origin[a] = static_cast<std::size_t>(o);
  }
  std::array<std::size_t, 3> size{spec.size, spec.size, spec.size};
  Tensor block = crop(grid, origin, size);
  return block.reshaped({1, spec.size, spec.size, spec.size});
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += w[i + radius];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// One separable pass along `axis` with edge replication, double accumulation.
void blur_axis(const float* src, float* dst, const std::size_t dims[3], int axis,
               const std::vector<double>& w) {
  const int radius = (static_cast<int>(w.size()) - 1) / 2;
  const std::size_t strides[3] = {dims[1] * dims[2], dims[2], 1};
  const std::size_t n = dims[0] * dims[1] * dims[2];
  const std::int64_t len = static_cast<std::int64_t>(dims[axis]);
  const std::size_t stride = strides[axis];
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t pos = static_cast<std::int64_t>((i / stride) % dims[axis]);
    double acc = 0.0;
    for (int t = -radius; t <= radius; ++t) {
      std::int64_t p = pos + t;
      p = std::clamp<std::int64_t>(p, 0, len - 1);
      acc += w[t + radius] *
             static_cast<double>(src[i + static_cast<std::size_t>(p - pos) * stride]);
    }
    dst[i] = static_cast<float>(acc);
  }
}

}  // namespace

Tensor gaussian_blur3d(const Tensor& roi, double sigma) {
  if (sigma < 0.0) throw DataError(msg("gaussian_blur3d: negative sigma ", sigma));
  if (sigma == 0.0) return roi;
  if (roi.rank() != 3 && !(roi.rank() == 4 && roi.extent(0) == 1))
    throw ShapeError(msg("gaussian_blur3d expects [D,H,W] or [1,D,H,W], got ",
                         shape_string(roi.shape())));
  const std::size_t base = roi.rank() == 4 ? 1 : 0;
  const std::size_t dims[3] = {roi.extent(base), roi.extent(base + 1),
                               roi.extent(base + 2)};
  const auto w = gaussian_kernel(sigma);
  Tensor a = roi;
  Tensor b(roi.shape());
  blur_axis(a.data(), b.data(), dims, 0, w);
  blur_axis(b.data(), a.data(), dims, 1, w);
  blur_axis(a.data(), b.data(), dims, 2, w);
  return b;
}

std::pair<Tensor, Tensor> merge_lr(const Tensor& left_roi, const Tensor& right_roi) {
  if (!left_roi.same_shape(right_roi))
    throw ShapeError(msg("merge_lr: shape mismatch ", shape_string(left_roi.shape()),
                         " vs ", shape_string(right_roi.shape())));
  return {left_roi, flip_axis(right_roi, right_roi.rank() - 1)};
}

// ---------------------------------------------------------------------------
// balancing augmentation and test sets
// ---------------------------------------------------------------------------

namespace {

TransformRecord random_transform(Rng& rng, bool with_blur) {
  TransformRecord t;
  for (auto& s : t.shift) s = static_cast<int>(rng.uniform_int(-2, 2));
  t.sigma = with_blur ? rng.uniform(0.0, 1.2) : 0.0;
  return t;
}

}  // namespace

AugmentationPlan balance_and_augment(
    const std::map<Diagnosis, std::vector<std::string>>& train_subjects, int k,
    std::uint64_t seed) {
  if (k < 1) throw DataError(msg("augmentation level k must be >= 1, got ", k));
  std::size_t n_max = 0;
  for (const auto& [diag, ids] : train_subjects) {
    if (ids.empty())
      throw DataError(msg("class ", to_string(diag), " has no train subjects"));
    n_max = std::max(n_max, ids.size());
  }
  const std::size_t target = n_max * static_cast<std::size_t>(k);
  const std::uint64_t aug_seed = derive_seed(seed, "augment");

  AugmentationPlan plan;
  for (const auto& [diag, ids] : train_subjects) {
    std::vector<SampleRef>& out = plan.train[diag];
    for (std::size_t i = 0; i < ids.size(); ++i)
      out.push_back(SampleRef{msg(to_string(diag), "_orig_", ids[i]), ids[i], diag,
                              TransformRecord{}, true});
    const std::size_t n_new = target - ids.size();
    for (std::size_t i = 0; i < n_new; ++i) {
      Rng rng = Rng::keyed(aug_seed, static_cast<std::uint64_t>(diag), i);
      out.push_back(SampleRef{msg(to_string(diag), "_gen_", i),
                              ids[i % ids.size()],  // round-robin source subject
                              diag, random_transform(rng, true), false});
    }
  }
  return plan;
}

TestSets build_test_sets(
    const std::map<Diagnosis, std::vector<std::string>>& test_subjects,
    std::uint64_t seed) {
  constexpr std::size_t kTestAugFactor = 10;  // 12 subjects -> 120 samples
  TestSets sets;
  const std::uint64_t s1 = derive_seed(seed, "test1");
  const std::uint64_t s2 = derive_seed(seed, "test2");
  for (const auto& [diag, ids] : test_subjects) {
    if (ids.empty()) throw DataError(msg("class ", to_string(diag), " has no test subjects"));
    auto& t0 = sets.test0[diag];
    for (const auto& id : ids)
      t0.push_back(SampleRef{msg(to_string(diag), "_t0_", id), id, diag,
                             TransformRecord{}, true});
    const std::size_t n_aug = ids.size() * kTestAugFactor;
    auto& t1 = sets.test1[diag];
    auto& t2 = sets.test2[diag];
    for (std::size_t i = 0; i < n_aug; ++i) {
      Rng r1 = Rng::keyed(s1, static_cast<std::uint64_t>(diag), i);
      t1.push_back(SampleRef{msg(to_string(diag), "_t1_", i), ids[i % ids.size()], diag,
                             random_transform(r1, false), false});
      Rng r2 = Rng::keyed(s2, static_cast<std::uint64_t>(diag), i);
      t2.push_back(SampleRef{msg(to_string(diag), "_t2_", i), ids[i % ids.size()], diag,
                             random_transform(r2, true), false});
    }
  }
  return sets;
}

ValidationSplit make_validation_split(
    const std::map<Diagnosis, std::size_t>& pool_sizes, double validation_fraction,
    std::uint64_t seed, long epoch_index) {
  if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
    throw DataError(msg("validation fraction ", validation_fraction, " outside (0,1)"));
  ValidationSplit split;
  const std::uint64_t split_seed = derive_seed(seed, "validation-split");
  for (const auto& [diag, n] : pool_sizes) {
    if (n < 10)
      throw DataError(msg("class ", to_string(diag), " pool has ", n,
                          " samples; need >= 10 to hold out validation"));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = Rng::keyed(split_seed, static_cast<std::uint64_t>(diag),
                         static_cast<std::uint64_t>(epoch_index));
    for (std::size_t i = n; i-- > 1;) {
      const std::size_t j =
          static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(idx[i], idx[j]);
    }
    const std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(validation_fraction * n)));
    split.val[diag].assign(idx.begin(), idx.begin() + n_val);
    split.fit[diag].assign(idx.begin() + n_val, idx.end());
  }
  return split;
}

// ---------------------------------------------------------------------------
// synthetic phantom cohort
// ---------------------------------------------------------------------------

namespace {

// Class offsets: the disease end shrinks and dims the blob, the control end
// grows and brightens it; scaled by the separation parameter.
double class_offset(Diagnosis d) {
  switch (d) {
    case Diagnosis::kAD: return -1.0;
    case Diagnosis::kMCI: return 0.0;
    default: return 1.0;
  }
}

}  // namespace

SynthDataset synth_dataset(const SynthParams& params) {
  if (params.separation < 0.0)
    throw DataError("synth_dataset: separation must be >= 0");
  SynthDataset ds;
  ds.manifest.seed = params.seed;
  ds.manifest.k = params.k;
  ds.manifest.volume_shape = params.volume_shape;
  const auto& vs = params.volume_shape;

  if (!params.roi_centers.empty()) {
    ds.manifest.roi_centers = params.roi_centers;
  } else {
    // mirrored about the sagittal midline, a quarter of the width out
    const std::int64_t cz = static_cast<std::int64_t>(vs[0] / 2);
    const std::int64_t cy = static_cast<std::int64_t>(vs[1] / 2);
    const std::int64_t cx = static_cast<std::int64_t>(vs[2] / 2);
    const std::int64_t dx = static_cast<std::int64_t>(vs[2] / 4);
    ds.manifest.roi_centers["left_hippocampus"] = {cz, cy, cx - dx};
    ds.manifest.roi_centers["right_hippocampus"] = {cz, cy, cx + dx};
  }

  const std::uint64_t synth_seed = derive_seed(params.seed, "synth");
  for (const auto& [diag, count] : params.subjects_per_class) {
    if (count <= params.test_per_class)
      throw DataError(msg("class ", to_string(diag), " has ", count,
                          " subjects but needs more than the ", params.test_per_class,
                          " reserved for test"));
    for (std::size_t i = 0; i < count; ++i) {
      SubjectRecord subject;
      subject.id = msg(to_string(diag), "_", i < 10 ? "00" : i < 100 ? "0" : "", i);
      subject.diagnosis = diag;

      Rng rng = Rng::keyed(synth_seed, static_cast<std::uint64_t>(diag), i);
      const double off = class_offset(diag) * params.separation;
      const double intensity = (0.55 + 0.12 * off) * rng.uniform(0.95, 1.05);
      const double radius = 9.0 * (1.0 + 0.12 * off) * rng.uniform(0.95, 1.05);
      std::array<double, 3> jitter{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                   rng.uniform(-1.0, 1.0)};

      Tensor smri({vs[0], vs[1], vs[2]});
      float* p = smri.data();
      for (std::size_t z = 0; z < vs[0]; ++z)
        for (std::size_t y = 0; y < vs[1]; ++y)
          for (std::size_t x = 0; x < vs[2]; ++x) {
            double v = 0.15 + 0.1 * static_cast<double>(y) / static_cast<double>(vs[1]);
            for (const auto& [name, c] : ds.manifest.roi_centers) {
              const double dz = (static_cast<double>(z) - (c[0] + jitter[0])) / radius;
              const double dy =
                  (static_cast<double>(y) - (c[1] + jitter[1])) / (radius * 0.85);
              const double dx =
                  (static_cast<double>(x) - (c[2] + jitter[2])) / (radius * 0.7);
              const double r2 = dz * dz + dy * dy + dx * dx;
              if (r2 < 16.0) v += intensity * std::exp(-0.5 * r2);
            }
            *p++ = static_cast<float>(v);
          }
      // voxel noise and the second modality with its own contrast transform
      Tensor dti(smri.shape());
      Rng noise = Rng::keyed(synth_seed, static_cast<std::uint64_t>(diag), i, 1);
      for (std::size_t n = 0; n < smri.size(); ++n) {
        const double base = smri[n];
        smri[n] = static_cast<float>(base + 0.02 * noise.normal());
        dti[n] = static_cast<float>(0.9 - 0.6 * base + 0.02 * noise.normal());
      }
      ds.store.put(subject.id, Modality::kSmri, std::move(smri));
      ds.store.put(subject.id, Modality::kMdDti, std::move(dti));
      ds.manifest.subjects.push_back(std::move(subject));
    }
    // the first test_per_class subjects of each class form the test membership
    std::vector<std::string> test_ids;
    for (std::size_t i = 0; i < params.test_per_class; ++i)
      test_ids.push_back(msg(to_string(diag), "_", i < 10 ? "00" : i < 100 ? "0" : "", i));
    ds.manifest.test_subjects[diag] = std::move(test_ids);
  }
  ds.manifest.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// sample blob store
// ---------------------------------------------------------------------------

void write_sample_blob(const std::filesystem::path& prefix, const Tensor& t,
                       const json& provenance) {
  std::filesystem::path bin = prefix;
  bin += ".bin";
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(msg("cannot write '", bin.string(), "'"));
  static_assert(std::endian::native == std::endian::little ||
                std::endian::native == std::endian::big);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto le = __builtin_bswap32(std::bit_cast<std::uint32_t>(t[i]));
      out.write(reinterpret_cast<const char*>(&le), 4);
    }
  }
  json side = provenance;
  side["shape"] = t.shape();
  side["dtype"] = "float32le";
  std::filesystem::path js = prefix;
  js += ".json";
  std::ofstream sidecar(js, std::ios::trunc);
  if (!sidecar) throw IoError(msg("cannot write '", js.string(), "'"));
  sidecar << side.dump(2) << "\n";
}

std::pair<Tensor, json> read_sample_blob(const std::filesystem::path& prefix) {
  std::filesystem::path js = prefix;
  js += ".json";
  std::ifstream sidecar(js);
  if (!sidecar) throw IoError(msg("cannot open '", js.string(), "'"));
  json side;
  sidecar >> side;
  std::vector<std::size_t> shape = side.at("shape").get<std::vector<std::size_t>>();
  Tensor t(shape);
  std::filesystem::path bin = prefix;
  bin += ".bin";
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError(msg("cannot open '", bin.string(), "'"));
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float)))
    throw IoError(msg("'", bin.string(), "': truncated blob"));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(t[i])));
  return {std::move(t), std::move(side)};
}

}  // namespace hippofuse
