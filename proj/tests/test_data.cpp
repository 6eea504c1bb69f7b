#include <gtest/gtest.h>

#include <jpeglib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rmgpmsi/data.hpp"
#include "rmgpmsi/image_io.hpp"
#include "rmgpmsi/optim.hpp"

using namespace rmgpmsi;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rmgpmsi_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ImageTensor gradient_image(std::size_t h, std::size_t w) {
  ImageTensor img(h, w, 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>((y * 7 + x * 13 + c * 50) % 256) / 255.0f;
  return img;
}

void write_jpeg(const std::string& path, const ImageTensor& img) {
  const auto bytes = io::to_bytes(img);
  FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr err{};
  cinfo.err = jpeg_std_error(&err);
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 100, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<std::uint8_t*>(bytes.data()) + cinfo.next_scanline * img.width() * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

}  // namespace

// --- optim -----------------------------------------------------------------

TEST(Optim, CosineScheduleEndpoints) {
  EXPECT_DOUBLE_EQ(optim::cosine_lr(0.002, 0, 300), 0.002);
  EXPECT_NEAR(optim::cosine_lr(0.002, 150, 300), 0.001, 1e-15);
  EXPECT_NEAR(optim::cosine_lr(0.002, 300, 300), 0.0, 1e-18);
  for (std::size_t e = 1; e <= 300; ++e)
    EXPECT_LE(optim::cosine_lr(0.002, e, 300), optim::cosine_lr(0.002, e - 1, 300));
}

TEST(Optim, SgdMatchesHandUnrolledRecurrence) {
  nn::Param<double> w("w", {1, 2, 1, 1}, nn::ParamGroup::Added);
  nn::Param<double> b("b", {1, 1, 1, 1}, nn::ParamGroup::Pretrained);
  w.value[0] = 1.0, w.value[1] = -2.0, b.value[0] = 0.5;
  optim::Sgd<double> sgd(0.9, 5e-4);
  std::vector<nn::Param<double>*> params{&w, &b};
  const optim::GroupRates rates{0.01, 0.1};
  double v0 = 0, v1 = 0, vb = 0, w0 = 1.0, w1 = -2.0, wb = 0.5;
  for (int step = 0; step < 3; ++step) {
    const double g0 = 0.3 * (step + 1), g1 = -0.1, gb = 0.7;
    w.grad[0] = g0, w.grad[1] = g1, b.grad[0] = gb;
    sgd.step(params, rates);
    v0 = 0.9 * v0 + g0 + 5e-4 * w0, w0 -= 0.1 * v0;
    v1 = 0.9 * v1 + g1 + 5e-4 * w1, w1 -= 0.1 * v1;
    vb = 0.9 * vb + gb + 5e-4 * wb, wb -= 0.01 * vb;
    EXPECT_NEAR(w.value[0], w0, 1e-15);
    EXPECT_NEAR(w.value[1], w1, 1e-15);
    EXPECT_NEAR(b.value[0], wb, 1e-15);
  }
  EXPECT_EQ(sgd.steps(), 3u);
  EXPECT_EQ(sgd.velocities().size(), 2u);
}

TEST(Optim, ZeroRateLeavesParametersUntouched) {
  nn::Param<double> w("w", {1, 3, 1, 1}, nn::ParamGroup::Pretrained);
  w.value.fill(0.25);
  w.grad.fill(1.0);
  optim::Sgd<double> sgd(0.9, 5e-4);
  std::vector<nn::Param<double>*> params{&w};
  sgd.step(params, {0.0, 0.1});
  for (double v : w.value.values()) EXPECT_EQ(v, 0.25);
}

// --- image io --------------------------------------------------------------

TEST(ImageIo, PngAndPnmRoundTripExactly) {
  const auto dir = temp_dir("io");
  const auto img = gradient_image(9, 11);
  for (const char* name : {"a.png", "a.ppm"}) {
    const auto path = (dir / name).string();
    io::write_image(path, img);
    const auto back = io::read_image(path);
    ASSERT_EQ(back.height(), 9u);
    ASSERT_EQ(back.width(), 11u);
    EXPECT_EQ(io::to_bytes(back), io::to_bytes(img)) << name;
  }
}

TEST(ImageIo, JpegDecodesCloseToSource) {
  const auto dir = temp_dir("jpeg");
  ImageTensor img(16, 16, 3, ValueRange::UnitFloat, 0.5f);
  const auto path = (dir / "flat.jpg").string();
  write_jpeg(path, img);
  const auto back = io::read_image(path);
  ASSERT_EQ(back.height(), 16u);
  for (float v : back.values()) EXPECT_NEAR(v, 0.5f, 2.0f / 255.0f);
}

TEST(ImageIo, ErrorsAreClassified) {
  const auto dir = temp_dir("ioerr");
  try {
    io::read_image((dir / "missing.png").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnreadableImage);
  }
  for (const char* name : {"bad.png", "bad.jpg", "bad.ppm"}) {
    std::ofstream((dir / name).string()) << "not an image";
    try {
      io::read_image((dir / name).string());
      FAIL() << name;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::DecodeError) << name;
    }
  }
}

// --- transforms ------------------------------------------------------------

TEST(Transform, CenterCropOffsetOf512To448Is32) {
  data::TransformSpec spec{512, 448, data::TransformMode::Eval};
  EXPECT_EQ(spec.center_offset(), (512u - 448u) / 2u);
  EXPECT_EQ(spec.center_offset(), 32u);
  ImageTensor img(512, 512, 1);
  for (std::size_t y = 0; y < 512; ++y)
    for (std::size_t x = 0; x < 512; ++x) img.at(y, x, 0) = static_cast<float>(y * 512 + x);
  Rng rng(0);
  const auto out = data::apply_transform(img, spec, rng);
  EXPECT_EQ(out.at(0, 0, 0), static_cast<float>(32 * 512 + 32));
  EXPECT_EQ(out.at(447, 447, 0), static_cast<float>((32 + 447) * 512 + 32 + 447));
}

TEST(Transform, OutputIsCropSizeRegardlessOfInput) {
  Rng rng(3);
  for (auto mode : {data::TransformMode::Train, data::TransformMode::Eval})
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{30, 50}, {80, 80}, {100, 37}}) {
      const auto out = data::apply_transform(gradient_image(h, w), {72, 64, mode}, rng);
      EXPECT_EQ(out.height(), 64u);
      EXPECT_EQ(out.width(), 64u);
      EXPECT_EQ(out.channels(), 3u);
      EXPECT_EQ(out.value_range(), ValueRange::UnitFloat);
      for (float v : out.values()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
    }
}

TEST(Transform, EvalIsDeterministic) {
  const auto img = gradient_image(40, 60);
  Rng a(1), b(999);
  const data::TransformSpec spec{48, 40, data::TransformMode::Eval};
  EXPECT_EQ(data::apply_transform(img, spec, a), data::apply_transform(img, spec, b));
}

TEST(Transform, TrainModeFlipsAboutHalfTheTime) {
  const auto img = gradient_image(16, 16);
  const data::TransformSpec spec{16, 16, data::TransformMode::Train};
  Rng rng(11);
  int flips = 0;
  const auto flipped = data::flip_horizontal(img);
  for (int i = 0; i < 2000; ++i) {
    const auto out = data::apply_transform(img, spec, rng);
    if (out == flipped) ++flips;
    else EXPECT_EQ(out, img);
  }
  EXPECT_NEAR(flips / 2000.0, 0.5, 0.05);
}

TEST(Transform, ResizeOfConstantImageIsConstant) {
  ImageTensor img(13, 7, 3, ValueRange::UnitFloat, 0.375f);
  const auto out = data::resize_bilinear(img, 32, 20);
  for (float v : out.values()) EXPECT_FLOAT_EQ(v, 0.375f);
}

TEST(Transform, RejectsInvalidSpec) {
  EXPECT_THROW((data::TransformSpec{64, 72}.validate()), Error);
  EXPECT_THROW((data::TransformSpec{64, 60}.validate()), Error);
  EXPECT_NO_THROW((data::TransformSpec{512, 448}.validate()));
}

// --- synthetic data --------------------------------------------------------

TEST(Synthetic, CountsAndBalance) {
  const auto ds = data::make_synthetic(4, 8, 64, 5);
  ASSERT_EQ(ds.size(), 32u);
  std::vector<int> counts(4);
  for (const auto& s : ds.samples) {
    ++counts[static_cast<std::size_t>(s.label)];
    EXPECT_EQ(s.image.height(), 64u);
    EXPECT_EQ(s.image.channels(), 3u);
  }
  for (int c : counts) EXPECT_EQ(c, 8);
}

TEST(Synthetic, SeedDeterminism) {
  const auto a = data::make_synthetic(3, 4, 32, 9), b = data::make_synthetic(3, 4, 32, 9);
  const auto c = data::make_synthetic(3, 4, 32, 10);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.samples[i].image, b.samples[i].image);
  EXPECT_FALSE(a.samples[0].image == c.samples[0].image);
}

TEST(Synthetic, RejectsBadSizes) {
  for (auto [k, size] : {std::pair<std::size_t, std::size_t>{4, 60}, {4, 0}, {1, 64}}) {
    try {
      data::make_synthetic(k, 2, size, 0);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::BadSize);
    }
  }
}

// Nearest class mean on raw pixels, fitted on one stream and scored on another.
TEST(Synthetic, NearestCentroidFindsSignalOnHeldOutSplit) {
  constexpr double kMargin = 0.05;
  for (std::size_t k : {4u, 8u}) {
    const data::SyntheticSpec spec{k, 40, 64, 21};
    const auto train = data::make_synthetic(spec, 0), test = data::make_synthetic(spec, 1);
    const std::size_t dim = 64 * 64 * 3;
    std::vector<std::vector<double>> mean(k, std::vector<double>(dim, 0.0));
    for (const auto& s : train.samples)
      for (std::size_t i = 0; i < dim; ++i) mean[static_cast<std::size_t>(s.label)][i] += s.image.values()[i] / 40.0;
    int correct = 0;
    for (const auto& s : test.samples) {
      double best = 1e300;
      int arg = -1;
      for (std::size_t c = 0; c < k; ++c) {
        double d = 0;
        for (std::size_t i = 0; i < dim; ++i) d += (s.image.values()[i] - mean[c][i]) * (s.image.values()[i] - mean[c][i]);
        if (d < best) best = d, arg = static_cast<int>(c);
      }
      correct += arg == s.label;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
    EXPECT_GE(acc, 1.0 / static_cast<double>(k) + kMargin) << "K=" << k;
  }
}

// --- scanning and manifests ------------------------------------------------

TEST(Scan, CountsClassesAndSamples) {
  const auto root = temp_dir("scan");
  const auto ds = data::make_synthetic(2, 3, 16, 1);
  data::write_dataset(ds, root.string(), data::Split::Train);
  const auto m = data::scan_dataset(root.string(), data::Split::Train);
  EXPECT_EQ(m.classes.size(), 2u);
  EXPECT_EQ(m.samples.size(), 6u);
  EXPECT_TRUE(m.warnings.empty());
  EXPECT_EQ(data::serialize_manifest(m), data::serialize_manifest(data::scan_dataset(root.string(), data::Split::Train)));
  const auto loaded = data::load_dataset(m, 16);
  ASSERT_EQ(loaded.size(), 6u);
  for (std::size_t i = 0; i < loaded.size(); ++i) EXPECT_EQ(loaded.samples[i].label, m.samples[i].class_index);
}

TEST(Scan, EmptyClassIsKeptWithWarning) {
  const auto root = temp_dir("scan_empty");
  data::write_dataset(data::make_synthetic(2, 1, 16, 1), root.string(), data::Split::Test);
  fs::create_directories(root / "test" / "zzz_empty");
  const auto m = data::scan_dataset(root.string(), data::Split::Test);
  ASSERT_EQ(m.classes.size(), 3u);
  EXPECT_EQ(m.classes[2], "zzz_empty");
  EXPECT_EQ(m.samples.size(), 2u);
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].find("zzz_empty"), std::string::npos);
}

TEST(Scan, LexicographicClassOrder) {
  const auto root = temp_dir("scan_order");
  for (const char* name : {"b", "a", "c"}) {
    fs::create_directories(root / "train" / name);
    io::write_png((root / "train" / name / "x.png").string(), gradient_image(4, 4));
  }
  const auto m = data::scan_dataset(root.string(), data::Split::Train);
  EXPECT_EQ(m.classes, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Scan, Errors) {
  const auto root = temp_dir("scan_err");
  try {
    data::scan_dataset((root / "nope").string(), data::Split::Train);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingRoot);
  }
  fs::create_directories(root / "train");
  try {
    data::scan_dataset(root.string(), data::Split::Train);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoClasses);
  }
}

TEST(Manifest, RoundTripIsByteStable) {
  data::DatasetManifest m;
  m.classes = {"alpha", "beta gamma", "delta"};
  Rng rng(4);
  for (int i = 0; i < 50; ++i)
    m.samples.push_back({"dir" + std::to_string(i % 3) + "/img " + std::to_string(rng.next_u64() % 1000) + ".png",
                         static_cast<int>(rng.uniform_index(3))});
  const auto text = data::serialize_manifest(m);
  const auto parsed = data::parse_manifest(text, "root", data::Split::Train);
  EXPECT_EQ(parsed.classes, m.classes);
  EXPECT_EQ(parsed.samples, m.samples);
  EXPECT_EQ(data::serialize_manifest(parsed), text);
}

TEST(Manifest, RejectsUnknownClassIndex) {
  EXPECT_THROW(data::parse_manifest("# class\t0\ta\n1\tx.png\n", "r", data::Split::Train), Error);
}
