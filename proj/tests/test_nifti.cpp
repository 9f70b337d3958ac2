#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "pbtseg/nifti.hpp"
#include "support.hpp"

using namespace pbtseg;
using namespace testing;
namespace fs = std::filesystem;

namespace {

Affine random_affine(Xorshift64& rng) {
  // random rotation from a unit quaternion, scaled per column
  double q[4];
  double norm = 0;
  for (auto& v : q) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : q) v /= norm;
  const double a = q[0], b = q[1], c = q[2], d = q[3];
  const double R[3][3] = {{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
                          {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
                          {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}};
  Affine aff{};
  for (int col = 0; col < 3; ++col) {
    const double s = 0.5 + 2.5 * rng.uniform();
    for (int row = 0; row < 3; ++row) aff[row * 4 + col] = R[row][col] * s;
  }
  for (int row = 0; row < 3; ++row) aff[row * 4 + 3] = (rng.uniform() - 0.5) * 240.0;
  aff[15] = 1.0;
  return aff;
}

bool affine_close(const Affine& a, const Affine& b) {
  for (std::size_t i = 0; i < 16; ++i) {
    if (std::abs(a[i] - b[i]) > 1e-6 * std::max(1.0, std::abs(a[i]))) return false;
  }
  return true;
}

std::vector<std::uint8_t> sample_file() {
  const auto g = VolumeGeometry::isotropic({3, 2, 2});
  return nifti::encode_labels(LabelVolume(g, {0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3}), "sample");
}

template <typename T>
void poke(std::vector<std::uint8_t>& bytes, std::size_t off, T v) {
  std::memcpy(bytes.data() + off, &v, sizeof(T));
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("nifti") {
  TEST_CASE("random label volumes round trip, plain and gzipped") {
    ScratchDir dir("nifti");
    Xorshift64 rng(808);
    for (int i = 0; i < 30; ++i) {
      const auto shape = random_shape(rng, 24);
      const VolumeGeometry g(shape, random_affine(rng));
      const auto v = random_labels(rng, shape, rng.uniform());
      const VolumeGeometry gv = g;
      const LabelVolume vol(gv, std::vector<std::uint8_t>(v.codes().begin(), v.codes().end()));
      for (const char* name : {"a.nii", "a.nii.gz"}) {
        const auto p = dir.path / name;
        save_nifti(vol, p, "roundtrip");
        std::string descrip;
        const auto back = load_label_volume(p, descrip);
        CHECK(descrip == "roundtrip");
        CHECK(back.geometry().shape() == shape);
        CHECK(std::equal(back.codes().begin(), back.codes().end(), vol.codes().begin(), vol.codes().end()));
        CHECK(affine_close(g.affine(), back.geometry().affine()));
      }
      std::ifstream gz(dir.path / "a.nii.gz", std::ios::binary);
      CHECK(gz.get() == 0x1F);
      CHECK(gz.get() == 0x8B);
    }
  }

  TEST_CASE("intensity volumes round trip as float32") {
    ScratchDir dir("nifti");
    Xorshift64 rng(9);
    const auto g = VolumeGeometry::isotropic({5, 6, 7}, 1.2);
    std::vector<float> values(g.voxel_count());
    for (auto& v : values) v = static_cast<float>(rng.normal() * 100.0);
    const IntensityVolume img(g, values, Sequence::FLAIR);
    save_nifti(img, dir.path / "f.nii.gz");
    const auto back = load_intensity_volume(dir.path / "f.nii.gz", Sequence::FLAIR);
    CHECK(std::equal(back.values().begin(), back.values().end(), values.begin(), values.end()));
    CHECK(back.sequence() == Sequence::FLAIR);
  }

  TEST_CASE("header problems are reported") {
    const auto good = sample_file();
    CHECK_NOTHROW(nifti::decode(good));

    auto bad_size = good;
    poke<std::int32_t>(bad_size, 0, 540);
    CHECK_THROWS_WITH_AS(nifti::decode(bad_size), doctest::Contains("sizeof_hdr"), NiftiError);

    auto ni1 = good;
    std::memcpy(ni1.data() + 344, "ni1\0", 4);
    CHECK_THROWS_WITH_AS(nifti::decode(ni1), doctest::Contains("ni1"), NiftiError);

    auto junk = good;
    std::memcpy(junk.data() + 344, "abc\0", 4);
    CHECK_THROWS_WITH_AS(nifti::decode(junk), doctest::Contains("magic"), NiftiError);

    auto dtype = good;
    poke<std::int16_t>(dtype, 70, 128);  // RGB24
    CHECK_THROWS_WITH_AS(nifti::decode(dtype), doctest::Contains("datatype"), NiftiError);

    auto four_d = good;
    poke<std::int16_t>(four_d, 40, 4);
    poke<std::int16_t>(four_d, 48, 3);
    CHECK_THROWS_AS(nifti::decode(four_d), NiftiError);

    auto truncated = good;
    truncated.resize(truncated.size() - 1);
    CHECK_THROWS_WITH_AS(nifti::decode(truncated), doctest::Contains("truncated"), NiftiError);

    CHECK_THROWS_AS(nifti::decode(std::vector<std::uint8_t>(100, 0)), NiftiError);
  }

  TEST_CASE("trailing singleton dimensions are accepted") {
    auto bytes = sample_file();
    poke<std::int16_t>(bytes, 40, 4);
    poke<std::int16_t>(bytes, 48, 1);
    CHECK(nifti::decode(bytes).values.size() == 12);
  }

  TEST_CASE("label files with foreign codes are rejected") {
    ScratchDir dir("nifti");
    auto bytes = sample_file();
    bytes[352 + 5] = 7;
    write_bytes(dir.path / "bad.nii", bytes);
    CHECK_THROWS_WITH_AS(load_label_volume(dir.path / "bad.nii"), doctest::Contains("label code 7"), LabelError);

    // fractional values in a float file
    const auto g = VolumeGeometry::isotropic({2, 1, 1});
    save_nifti(IntensityVolume(g, {1.0f, 1.5f}, Sequence::T1), dir.path / "frac.nii");
    CHECK_THROWS_AS(load_label_volume(dir.path / "frac.nii"), LabelError);
    // integral floats are fine
    save_nifti(IntensityVolume(g, {1.0f, 3.0f}, Sequence::T1), dir.path / "int.nii");
    CHECK(load_label_volume(dir.path / "int.nii").codes()[1] == 3);
  }

  TEST_CASE("scl_slope and scl_inter are applied") {
    auto bytes = sample_file();
    poke<float>(bytes, 112, 2.0f);
    poke<float>(bytes, 116, 10.0f);
    const auto raw = nifti::decode(bytes);
    CHECK(raw.values[3] == 16.0);
  }

  TEST_CASE("qform is used when there is no sform") {
    auto bytes = sample_file();
    poke<std::int16_t>(bytes, 254, 0);  // sform_code
    poke<std::int16_t>(bytes, 252, 1);  // qform_code
    const float s = static_cast<float>(std::sqrt(0.5));
    poke<float>(bytes, 256, 0.0f);  // b
    poke<float>(bytes, 260, 0.0f);  // c
    poke<float>(bytes, 264, s);  // d: 90 degrees about z
    poke<float>(bytes, 268, 5.0f);
    poke<float>(bytes, 272, -3.0f);
    poke<float>(bytes, 276, 1.0f);
    poke<float>(bytes, 76, 1.0f);  // qfac
    poke<float>(bytes, 80, 2.0f);
    poke<float>(bytes, 84, 3.0f);
    poke<float>(bytes, 88, 4.0f);
    const auto aff = nifti::decode(bytes).geometry.affine();
    const Affine expect{0, -3, 0, 5, 2, 0, 0, -3, 0, 0, 4, 1, 0, 0, 0, 1};
    CHECK(affine_close(expect, aff));
  }

  TEST_CASE("pixdim fallback without sform or qform") {
    auto bytes = sample_file();
    poke<std::int16_t>(bytes, 254, 0);
    poke<float>(bytes, 80, 0.5f);
    poke<float>(bytes, 84, 0.75f);
    poke<float>(bytes, 88, 2.0f);
    const auto g = nifti::decode(bytes).geometry;
    CHECK(g.spacing()[0] == 0.5);
    CHECK(g.spacing()[2] == 2.0);
    CHECK(g.affine()[3] == 0.0);
  }

  TEST_CASE("big-endian files are read") {
    std::vector<std::uint8_t> be(352 + 8, 0);
    auto put16 = [&](std::size_t off, std::uint16_t v) {
      be[off] = static_cast<std::uint8_t>(v >> 8);
      be[off + 1] = static_cast<std::uint8_t>(v);
    };
    auto put32 = [&](std::size_t off, std::uint32_t v) {
      for (int i = 0; i < 4; ++i) be[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
    };
    auto putf = [&](std::size_t off, float f) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put32(off, u);
    };
    put32(0, 348);
    put16(40, 3);
    put16(42, 2);
    put16(44, 2);
    put16(46, 2);
    put16(70, 2);
    put16(72, 8);
    putf(80, 1.5f);
    putf(84, 1.5f);
    putf(88, 1.5f);
    putf(108, 352.0f);
    std::memcpy(be.data() + 344, "n+1\0", 4);
    for (std::uint8_t i = 0; i < 8; ++i) be[352 + i] = i % 4;
    const auto raw = nifti::decode(be);
    CHECK(raw.geometry.shape() == Shape{2, 2, 2});
    CHECK(raw.geometry.spacing()[1] == 1.5);
    CHECK(raw.values[7] == 3.0);
  }

  TEST_CASE("gzip helpers") {
    std::vector<std::uint8_t> data(10000);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i * 7);
    const auto z = nifti::gzip_compress(data);
    CHECK(nifti::is_gzip(z));
    CHECK_FALSE(nifti::is_gzip(data));
    CHECK(nifti::gzip_decompress(z) == data);
    auto broken = z;
    broken.resize(broken.size() / 2);
    CHECK_THROWS_AS(nifti::gzip_decompress(broken), NiftiError);
  }

  TEST_CASE("description is truncated to the header field") {
    ScratchDir dir("nifti");
    const LabelVolume v(VolumeGeometry::isotropic({2, 2, 2}));
    save_nifti(v, dir.path / "d.nii", std::string(200, 'x'));
    CHECK(read_nifti_description(dir.path / "d.nii").size() == 79);
  }
}
