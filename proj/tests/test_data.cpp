#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hippofuse/data.hpp"
#include "hippofuse/nifti.hpp"
#include "oracles.hpp"

using namespace hippofuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "hippofuse_test_data";
  fs::create_directories(dir);
  return dir;
}

Tensor linear_volume(std::size_t d, std::size_t h, std::size_t w) {
  Tensor t({d, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i % 9973) * 0.25f;
  return t;
}

}  // namespace

TEST_CASE("nifti round trip is bit exact") {
  Rng rng(1);
  auto vol = oracle::random_tensor<float>({9, 11, 13}, rng, -100.0, 4000.0);
  const auto path = temp_dir() / "roundtrip.nii";
  write_nifti(path, vol);
  auto back = read_nifti(path);
  REQUIRE(back.grid.shape() == vol.shape());
  for (std::size_t i = 0; i < vol.size(); ++i) CHECK(back.grid[i] == vol[i]);
  CHECK_FALSE(back.byte_swapped);
  CHECK(back.scl_slope == 0.0f);  // raw intensities used as-is
}

TEST_CASE("nifti byte-swapped int16 file parses") {
  // craft a big-endian int16 single-file volume by hand
  const auto path = temp_dir() / "swapped.nii";
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  h.dim[1] = 2;
  h.dim[2] = 2;
  h.dim[3] = 2;
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = kNiftiInt16;
  h.bitpix = 16;
  h.vox_offset = 352.0f;
  h.scl_slope = 2.0f;
  h.scl_inter = 10.0f;
  std::memcpy(h.magic, "n+1", 4);

  auto bs16 = [](std::int16_t v) {
    return static_cast<std::int16_t>(__builtin_bswap16(static_cast<std::uint16_t>(v)));
  };
  auto bs32f = [](float v) {
    return std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
  };
  Nifti1Header swapped = h;
  swapped.sizeof_hdr = __builtin_bswap32(348);
  for (auto& d : swapped.dim) d = bs16(d);
  swapped.datatype = bs16(h.datatype);
  swapped.bitpix = bs16(h.bitpix);
  swapped.vox_offset = bs32f(h.vox_offset);
  swapped.scl_slope = bs32f(h.scl_slope);
  swapped.scl_inter = bs32f(h.scl_inter);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(&swapped), sizeof(swapped));
  const char ext[4] = {0, 0, 0, 0};
  out.write(ext, 4);
  for (std::int16_t v : {1, -2, 3, -4, 5, -6, 7, -8}) {
    const std::int16_t sv = bs16(v);
    out.write(reinterpret_cast<const char*>(&sv), 2);
  }
  out.close();

  auto vol = read_nifti(path);
  CHECK(vol.byte_swapped);
  CHECK(vol.datatype == kNiftiInt16);
  REQUIRE(vol.grid.size() == 8);
  // scl_slope nonzero: value = slope * raw + inter
  const float expect[8] = {12.f, 6.f, 16.f, 2.f, 20.f, -2.f, 24.f, -6.f};
  for (std::size_t i = 0; i < 8; ++i) CHECK(vol.grid[i] == expect[i]);
}

TEST_CASE("nifti structured errors") {
  const auto dir = temp_dir();

  // bad magic
  {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = h.dim[2] = h.dim[3] = 1;
    h.datatype = kNiftiFloat32;
    h.vox_offset = 352.0f;
    std::memcpy(h.magic, "ni1", 4);
    std::ofstream out(dir / "badmagic.nii", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  }
  CHECK_THROWS_AS(read_nifti(dir / "badmagic.nii"), IoError);

  // unsupported datatype
  {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = h.dim[2] = h.dim[3] = 1;
    h.datatype = 64;  // float64: out of scope
    h.vox_offset = 352.0f;
    std::memcpy(h.magic, "n+1", 4);
    std::ofstream out(dir / "baddtype.nii", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  }
  try {
    read_nifti(dir / "baddtype.nii");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("datatype") != std::string::npos);
  }

  // truncated payload
  {
    Tensor t({4, 4, 4}, 1.0f);
    write_nifti(dir / "trunc.nii", t);
    fs::resize_file(dir / "trunc.nii", 352 + 100);
  }
  try {
    read_nifti(dir / "trunc.nii");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }

  CHECK_THROWS_AS(read_nifti(dir / "does_not_exist.nii"), IoError);
}

TEST_CASE("extract_roi window arithmetic") {
  auto grid = linear_volume(121, 145, 121);
  RoiSpec spec{"left_hippocampus", {60, 72, 60}, 28};
  auto roi = extract_roi(grid, spec);
  REQUIRE(roi.shape() == std::vector<std::size_t>{1, 28, 28, 28});
  // window must be [46,74) x [58,86) x [46,74)
  for (std::size_t z = 0; z < 3; ++z)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x)
        CHECK(roi[(z * 28 + y) * 28 + x] ==
              grid[((46 + z) * 145 + 58 + y) * 121 + 46 + x]);

  // central crop of the extended ROI equals the base ROI bit-exactly
  RoiSpec ext{"left_hippocampus", {60, 72, 60}, 48};
  auto big = extract_roi(grid, ext);
  std::vector<std::size_t> origin{0, 10, 10, 10}, size{1, 28, 28, 28};
  auto center_crop = crop(big, origin, size);
  for (std::size_t i = 0; i < roi.size(); ++i) CHECK(center_crop[i] == roi[i]);

  // a shift moves the window, not the content
  auto shifted = extract_roi(grid, spec, {2, 0, -2});
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t x = 0; x < 2; ++x)
      CHECK(shifted[(z * 28) * 28 + x] == grid[((48 + z) * 145 + 58) * 121 + 44 + x]);

  // out-of-bounds window is rejected with the axis named
  RoiSpec edge{"left_hippocampus", {15, 72, 60}, 28};
  CHECK_NOTHROW(extract_roi(grid, edge));  // origin z = 1: still inside
  try {
    extract_roi(grid, edge, {-2, 0, 0});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("axis 0") != std::string::npos);
  }
}

TEST_CASE("merge_lr flips the right ROI along the sagittal axis") {
  Rng rng(2);
  auto left = oracle::random_tensor<float>({1, 4, 4, 4}, rng);
  auto right = oracle::random_tensor<float>({1, 4, 4, 4}, rng);
  auto [l, r] = merge_lr(left, right);
  for (std::size_t i = 0; i < left.size(); ++i) CHECK(l[i] == left[i]);
  auto unflipped = flip_axis(r, 3);
  for (std::size_t i = 0; i < right.size(); ++i) CHECK(unflipped[i] == right[i]);

  // sagittally symmetric content yields two identical samples
  Tensor sym({1, 2, 2, 2}, {1, 1, 2, 2, 3, 3, 4, 4});
  auto [sl, sr] = merge_lr(sym, sym);
  for (std::size_t i = 0; i < sym.size(); ++i) CHECK(sl[i] == sr[i]);

  CHECK_THROWS_AS(merge_lr(left, Tensor({1, 3, 3, 3})), ShapeError);
}

TEST_CASE("gaussian_blur3d") {
  Rng rng(3);
  auto roi = oracle::random_tensor<float>({1, 12, 12, 12}, rng, 0.0, 1.0);

  auto same = gaussian_blur3d(roi, 0.0);
  for (std::size_t i = 0; i < roi.size(); ++i) CHECK(same[i] == roi[i]);

  Tensor constant({1, 8, 8, 8}, 3.25f);
  auto blurred_const = gaussian_blur3d(constant, 1.1);
  for (std::size_t i = 0; i < constant.size(); ++i)
    CHECK(blurred_const[i] == doctest::Approx(3.25f).epsilon(1e-6));

  // interior-supported blob keeps its total intensity
  Tensor blob({16, 16, 16}, 0.0f);
  for (std::size_t z = 6; z < 10; ++z)
    for (std::size_t y = 6; y < 10; ++y)
      for (std::size_t x = 6; x < 10; ++x) blob[(z * 16 + y) * 16 + x] = 2.0f;
  auto blurred = gaussian_blur3d(blob, 1.0);
  double before = 0.0, after = 0.0;
  for (std::size_t i = 0; i < blob.size(); ++i) {
    before += blob[i];
    after += blurred[i];
  }
  CHECK(std::abs(after - before) <= 1e-6 * before);

  CHECK_THROWS_AS(gaussian_blur3d(roi, -0.1), DataError);
}

TEST_CASE("balance_and_augment reproduces the class arithmetic") {
  std::map<Diagnosis, std::vector<std::string>> classes;
  for (int i = 0; i < 36; ++i) classes[Diagnosis::kAD].push_back(msg("ad", i));
  for (int i = 0; i < 96; ++i) classes[Diagnosis::kMCI].push_back(msg("mci", i));
  for (int i = 0; i < 46; ++i) classes[Diagnosis::kNC].push_back(msg("nc", i));

  auto plan = balance_and_augment(classes, 10, 42);
  CHECK(plan.train[Diagnosis::kAD].size() == 960);
  CHECK(plan.train[Diagnosis::kMCI].size() == 960);
  CHECK(plan.train[Diagnosis::kNC].size() == 960);

  auto generated = [&](Diagnosis d) {
    std::size_t n = 0;
    for (const auto& r : plan.train[d])
      if (!r.original) ++n;
    return n;
  };
  CHECK(generated(Diagnosis::kAD) == 924);
  CHECK(generated(Diagnosis::kMCI) == 864);
  CHECK(generated(Diagnosis::kNC) == 914);

  // every generated sample stays inside the transform budget
  for (const auto& [diag, refs] : plan.train)
    for (const auto& r : refs) {
      for (int s : r.transform.shift) CHECK(std::abs(s) <= 2);
      CHECK(r.transform.sigma >= 0.0);
      CHECK(r.transform.sigma <= 1.2);
      if (r.original) {
        CHECK(r.transform.sigma == 0.0);
        CHECK(r.transform.shift == std::array<int, 3>{0, 0, 0});
      }
    }

  // pure function of the seed
  auto plan2 = balance_and_augment(classes, 10, 42);
  for (const auto& [diag, refs] : plan.train) {
    const auto& refs2 = plan2.train[diag];
    REQUIRE(refs.size() == refs2.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
      CHECK(refs[i].subject_id == refs2[i].subject_id);
      CHECK(refs[i].transform.shift == refs2[i].transform.shift);
      CHECK(refs[i].transform.sigma == refs2[i].transform.sigma);
    }
  }

  // degenerate case: equal classes at k=1 generate nothing
  std::map<Diagnosis, std::vector<std::string>> equal;
  for (int i = 0; i < 5; ++i) {
    equal[Diagnosis::kAD].push_back(msg("a", i));
    equal[Diagnosis::kNC].push_back(msg("n", i));
  }
  auto flat = balance_and_augment(equal, 1, 1);
  CHECK(flat.train[Diagnosis::kAD].size() == 5);
  for (const auto& r : flat.train[Diagnosis::kAD]) CHECK(r.original);
}

TEST_CASE("build_test_sets produces 12/120/120 per class") {
  std::map<Diagnosis, std::vector<std::string>> test;
  for (int i = 0; i < 12; ++i) {
    test[Diagnosis::kAD].push_back(msg("ad", i));
    test[Diagnosis::kNC].push_back(msg("nc", i));
  }
  auto sets = build_test_sets(test, 7);
  for (Diagnosis d : {Diagnosis::kAD, Diagnosis::kNC}) {
    CHECK(sets.test0[d].size() == 12);
    CHECK(sets.test1[d].size() == 120);
    CHECK(sets.test2[d].size() == 120);
    for (const auto& r : sets.test0[d]) {
      CHECK(r.original);
      CHECK(r.transform.sigma == 0.0);
    }
    for (const auto& r : sets.test1[d]) CHECK(r.transform.sigma == 0.0);
    bool any_blur = false;
    for (const auto& r : sets.test2[d]) any_blur |= r.transform.sigma > 0.0;
    CHECK(any_blur);
  }

  // test0 does not depend on the seed
  auto sets2 = build_test_sets(test, 999);
  for (std::size_t i = 0; i < 12; ++i)
    CHECK(sets.test0[Diagnosis::kAD][i].subject_id ==
          sets2.test0[Diagnosis::kAD][i].subject_id);
}

TEST_CASE("make_validation_split") {
  std::map<Diagnosis, std::size_t> sizes{{Diagnosis::kAD, 960}, {Diagnosis::kNC, 960}};
  auto split = make_validation_split(sizes, 0.1, 5, 0);
  for (Diagnosis d : {Diagnosis::kAD, Diagnosis::kNC}) {
    CHECK(split.fit[d].size() == 864);
    CHECK(split.val[d].size() == 96);
    std::vector<bool> seen(960, false);
    for (auto i : split.fit[d]) seen[i] = true;
    for (auto i : split.val[d]) {
      CHECK_FALSE(seen[i]);  // disjoint
      seen[i] = true;
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));  // exhaustive
  }

  // deterministic per (seed, epoch)
  auto again = make_validation_split(sizes, 0.1, 5, 0);
  CHECK(split.val[Diagnosis::kAD] == again.val[Diagnosis::kAD]);

  // different epochs give different splits nearly always
  int distinct = 0;
  auto base = make_validation_split(sizes, 0.1, 5, 0);
  for (long e = 1; e <= 100; ++e) {
    auto other = make_validation_split(sizes, 0.1, 5, e);
    if (other.val[Diagnosis::kAD] != base.val[Diagnosis::kAD]) ++distinct;
  }
  CHECK(distinct >= 99);

  std::map<Diagnosis, std::size_t> tiny{{Diagnosis::kAD, 5}};
  CHECK_THROWS_AS(make_validation_split(tiny, 0.1, 5, 0), DataError);
}

TEST_CASE("synth_dataset determinism and separability") {
  SynthParams params;
  params.subjects_per_class = {{Diagnosis::kAD, 16}, {Diagnosis::kNC, 16}};
  params.volume_shape = {64, 64, 64};
  params.separation = 3.0;
  params.seed = 11;
  params.test_per_class = 12;

  auto ds1 = synth_dataset(params);
  auto ds2 = synth_dataset(params);
  CHECK(ds1.manifest.subjects.size() == 32);
  const auto& s0 = ds1.manifest.subjects[0];
  const auto& g1 = ds1.store.get(s0, Modality::kSmri);
  const auto& g2 = ds2.store.get(ds2.manifest.subject(s0.id), Modality::kSmri);
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); i += 97) CHECK(g1[i] == g2[i]);

  // large separation: a mean-intensity threshold classifies perfectly
  RoiSpec roi{"left_hippocampus", ds1.manifest.roi_centers.at("left_hippocampus"), 28};
  std::vector<std::pair<double, Diagnosis>> means;
  for (const auto& subj : ds1.manifest.subjects) {
    auto r = extract_roi(ds1.store.get(subj, Modality::kSmri), roi);
    double m = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) m += r[i];
    means.push_back({m / r.size(), subj.diagnosis});
  }
  double best_acc = 0.0;
  for (const auto& [thr, unused] : means) {
    std::size_t correct = 0;
    for (const auto& [m, d] : means)
      if ((m > thr) == (d == Diagnosis::kNC) || (m == thr && d == Diagnosis::kAD))
        ++correct;
    best_acc = std::max(best_acc, static_cast<double>(correct) / means.size());
  }
  CHECK(best_acc == 1.0);
}

TEST_CASE("sample blob store round trip") {
  Rng rng(9);
  auto t = oracle::random_tensor<float>({1, 6, 6, 6}, rng);
  nlohmann::json prov{{"subject", "ad_001"}, {"sigma", 0.4}};
  const auto prefix = temp_dir() / "sample_ad_001";
  write_sample_blob(prefix, t, prov);
  auto [back, side] = read_sample_blob(prefix);
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
  CHECK(side.at("subject") == "ad_001");
  CHECK(side.at("dtype") == "float32le");
}

TEST_CASE("manifest json round trip and validation") {
  DatasetManifest m;
  m.seed = 21;
  m.k = 10;
  m.volume_shape = {64, 64, 64};
  m.roi_centers["left_hippocampus"] = {32, 32, 16};
  m.roi_centers["right_hippocampus"] = {32, 32, 48};
  for (int i = 0; i < 3; ++i) {
    SubjectRecord s;
    s.id = msg("ad_", i);
    s.diagnosis = Diagnosis::kAD;
    s.volume_paths[Modality::kSmri] = msg("vols/ad_", i, "_smri.nii");
    m.subjects.push_back(s);
  }
  m.test_subjects[Diagnosis::kAD] = {"ad_0"};
  auto j = m.to_json();
  auto back = DatasetManifest::from_json(j);
  CHECK(back.seed == m.seed);
  CHECK(back.k == m.k);
  CHECK(back.subjects.size() == 3);
  CHECK(back.roi_centers.at("right_hippocampus") ==
        (std::array<std::int64_t, 3>{32, 32, 48}));
  CHECK(back.subject("ad_1").volume_paths.at(Modality::kSmri) == "vols/ad_1_smri.nii");
  CHECK(back.is_test_subject("ad_0"));
  CHECK_FALSE(back.is_test_subject("ad_1"));
  CHECK(back.train_subjects(Diagnosis::kAD).size() == 2);
  CHECK_NOTHROW(back.validate());

  // wrong-diagnosis test membership is rejected
  m.test_subjects[Diagnosis::kNC] = {"ad_1"};
  CHECK_THROWS_AS(m.validate(), DataError);
}
