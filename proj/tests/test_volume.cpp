#include <doctest.h>

#include <Eigen/Core>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "vsr/io.hpp"
#include "vsr/volume.hpp"

using namespace vsr;

namespace {

Volume3Dd random_volume(Eigen::Vector3i dims, unsigned seed) {
  std::mt19937 eng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Volume3Dd v = Volume3Dd::zeros(dims);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data[i] = dist(eng);
  return v;
}

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / "vsr_volume_test";
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("vectorization is a bijection") {
  const Eigen::Vector3i dims{7, 5, 11};
  Eigen::Index expect = 0;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const Eigen::Index idx = flat_index(dims, x, y, z);
        CHECK(idx == expect++);
        const Eigen::Vector3i back = unflatten(dims, idx);
        CHECK(back[0] == x);
        CHECK(back[1] == y);
        CHECK(back[2] == z);
      }
}

TEST_CASE("paper patch geometry gives 5 voxel overlaps") {
  PatchSpec spec;  // 9x9x15, stride (4,4,10)
  CHECK(spec.patch_len() == 1215);
  CHECK(spec.h - spec.stride[0] == 5);
  CHECK(spec.h - spec.stride[1] == 5);
  CHECK(spec.v - spec.stride[2] == 5);

  const auto vol = random_volume({33, 33, 45}, 7);
  const auto batch = extract_patches(vol, spec);
  // Adjacent lattice origins differ by the stride, so patches share
  // extent - stride voxels per axis.
  CHECK(batch.origins[1][0] - batch.origins[0][0] == 4);
  for (const auto& o : batch.origins) {
    CHECK(o[0] + spec.h <= vol.dims[0]);
    CHECK(o[1] + spec.h <= vol.dims[1]);
    CHECK(o[2] + spec.v <= vol.dims[2]);
  }
}

TEST_CASE("volume equal to patch extents yields one patch at origin") {
  const auto vol = random_volume({9, 9, 15}, 1);
  PatchSpec spec;
  spec.stride = {3, 7, 2};
  const auto batch = extract_patches(vol, spec);
  REQUIRE(batch.count() == 1);
  CHECK(batch.origins[0] == Eigen::Vector3i(0, 0, 0));
  CHECK((batch.matrix.col(0) - vol.data).norm() == 0.0);
}

TEST_CASE("3x3x3 volume enumerates voxels in storage order") {
  Volume3Dd vol = Volume3Dd::zeros({3, 3, 3});
  for (Eigen::Index i = 0; i < 27; ++i) vol.data[i] = double(i);
  PatchSpec spec;
  spec.h = 3;
  spec.v = 3;
  spec.stride = {1, 1, 1};
  const auto batch = extract_patches(vol, spec);
  REQUIRE(batch.count() == 1);
  for (Eigen::Index i = 0; i < 27; ++i) CHECK(batch.matrix(i, 0) == double(i));
}

TEST_CASE("extraction rejects volumes smaller than the patch") {
  const auto vol = random_volume({8, 9, 15}, 2);
  PatchSpec spec;
  CHECK_THROWS_AS(extract_patches(vol, spec), DataError);
}

TEST_CASE("lattice clamps a flush boundary patch") {
  const auto lat = patch_lattice(10, 4, 3);
  CHECK(lat == std::vector<int>{0, 3, 6});
  const auto clamped = patch_lattice(11, 4, 3);
  CHECK(clamped == std::vector<int>{0, 3, 6, 7});
}

TEST_CASE("extract then recompose is the identity") {
  const auto vol = random_volume({12, 11, 10}, 3);
  PatchSpec spec;
  spec.h = 4;
  spec.v = 5;

  SUBCASE("non-overlapping covering strides") {
    spec.stride = {4, 4, 5};
    const auto batch = extract_patches(vol, spec);
    const auto back = recompose_average(batch, vol.dims);
    CHECK((back.data - vol.data).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("stride 1 round trip within 1e-12") {
    spec.stride = {1, 1, 1};
    const auto batch = extract_patches(vol, spec);
    const auto back = recompose_average(batch, vol.dims);
    CHECK((back.data - vol.data).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("9x9x15 stride-1 round trip on a larger volume") {
  const auto vol = random_volume({14, 13, 20}, 4);
  PatchSpec spec;
  spec.stride = {1, 1, 1};
  const auto batch = extract_patches(vol, spec);
  const auto back = recompose_average(batch, vol.dims);
  const double rel = (back.data - vol.data).norm() / vol.data.norm();
  CHECK(rel <= 1e-12);
}

TEST_CASE("mean of two fully overlapping single-voxel patches") {
  PatchBatchd batch;
  batch.spec.h = 1;
  batch.spec.v = 1;
  batch.spec.stride = {1, 1, 1};
  batch.origins = {{0, 0, 0}, {0, 0, 0}};
  batch.matrix.resize(1, 2);
  batch.matrix(0, 0) = 1.0;
  batch.matrix(0, 1) = 3.0;
  const auto out = recompose_average(batch, {1, 1, 1});
  CHECK(out.data[0] == 2.0);
}

TEST_CASE("recompose is invariant under patch list permutation") {
  const auto vol = random_volume({9, 8, 7}, 5);
  PatchSpec spec;
  spec.h = 3;
  spec.v = 2;
  spec.stride = {2, 2, 1};
  auto batch = extract_patches(vol, spec);
  const auto ref = recompose_average(batch, vol.dims);

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(batch.count()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = Eigen::Index(i);
  std::mt19937 eng(99);
  std::shuffle(perm.begin(), perm.end(), eng);

  PatchBatchd shuffled;
  shuffled.spec = spec;
  shuffled.matrix.resize(batch.matrix.rows(), batch.matrix.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.origins.push_back(batch.origins[static_cast<std::size_t>(perm[i])]);
    shuffled.matrix.col(Eigen::Index(i)) = batch.matrix.col(perm[i]);
  }
  const auto out = recompose_average(shuffled, vol.dims);
  CHECK((out.data - ref.data).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("coverage gaps are reported with voxel coordinates") {
  PatchBatchd batch;
  batch.spec.h = 1;
  batch.spec.v = 1;
  batch.spec.stride = {1, 1, 1};
  batch.origins = {{0, 0, 0}};
  batch.matrix.resize(1, 1);
  batch.matrix(0, 0) = 5.0;
  CHECK_THROWS_WITH_AS(recompose_average(batch, {2, 1, 1}),
                       doctest::Contains("(1,0,0)"), DataError);
}

TEST_CASE("VV1 round trip") {
  const auto dir = temp_dir();
  Volume3Dd vol = Volume3Dd::zeros({4, 5, 6}, {8.0, 8.0, 10.0});
  // f32-representable values so the round trip is bit-exact
  for (Eigen::Index i = 0; i < vol.size(); ++i) vol.data[i] = double(i) * 0.25;
  const std::string base = (dir / "roundtrip").string();
  write_volume(vol, base);
  const auto back = read_volume(base);
  CHECK(back.dims == vol.dims);
  CHECK(back.voxel_size_nm == vol.voxel_size_nm);
  CHECK((back.data - vol.data).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("VV1 rejects truncated payloads") {
  const auto dir = temp_dir();
  Volume3Dd vol = Volume3Dd::zeros({3, 3, 3});
  const std::string base = (dir / "truncated").string();
  write_volume(vol, base);
  std::filesystem::resize_file(base + ".raw", 26 * sizeof(float));
  CHECK_THROWS_AS(read_volume(base), DataError);
}

TEST_CASE("VV1 rejects invalid header dims") {
  const auto dir = temp_dir();
  Volume3Dd vol = Volume3Dd::zeros({2, 5, 6});
  const std::string base = (dir / "baddims").string();
  write_volume(vol, base);
  auto sidecar = load_json(base + ".json");
  sidecar["dims"] = {0, 5, 6};
  save_json(base + ".json", sidecar);
  CHECK_THROWS_AS(read_volume(base), DataError);
}

TEST_CASE("VV1 rejects non-finite payloads") {
  const auto dir = temp_dir();
  Volume3Dd vol = Volume3Dd::zeros({2, 2, 2});
  const std::string base = (dir / "nonfinite").string();
  write_volume(vol, base);
  std::vector<float> bad(8, std::numeric_limits<float>::infinity());
  write_bytes(base + ".raw", bad.data(), bad.size() * sizeof(float));
  CHECK_THROWS_AS(read_volume(base), DataError);
}

TEST_CASE("volume invariants are enforced") {
  CHECK_THROWS_AS(Volume3Dd::zeros({0, 1, 1}), DataError);
  Volume3Dd v = Volume3Dd::zeros({2, 2, 2});
  v.data.resize(7);
  CHECK_THROWS_AS(v.validate(), DataError);
  v.data.resize(8);
  v.data.setZero();
  v.data[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(v.validate(), DataError);
}

TEST_CASE("rescale_to_unit maps range to [0,1]") {
  auto v = random_volume({4, 4, 4}, 6);
  v.data = v.data.array() * 3.0 - 1.0;
  const auto scaled = rescale_to_unit(v);
  CHECK(scaled.data.minCoeff() == 0.0);
  CHECK(scaled.data.maxCoeff() == 1.0);
  auto flat = Volume3Dd::zeros({2, 2, 2});
  flat.data.setConstant(4.0);
  CHECK(rescale_to_unit(flat).data.isZero());
}

TEST_CASE("center_columns removes patch means") {
  auto vol = random_volume({6, 6, 6}, 8);
  PatchSpec spec;
  spec.h = 3;
  spec.v = 3;
  spec.stride = {3, 3, 3};
  auto batch = extract_patches(vol, spec);
  center_columns(batch);
  for (Eigen::Index c = 0; c < batch.count(); ++c)
    CHECK(std::abs(batch.matrix.col(c).mean()) <= 1e-14);
}

TEST_CASE("bitmask round trip") {
  const auto dir = temp_dir();
  MaskImage mask(5, 3);
  std::mt19937 eng(11);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = (eng() & 1u) != 0;
  const std::string path = (dir / "mask.bits").string();
  write_bitmask(mask, path);
  const auto back = read_bitmask(path, 5, 3);
  CHECK((back == mask).all());
}
