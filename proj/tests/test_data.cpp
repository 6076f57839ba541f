#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "eedvit/checkpoint.hpp"
#include "eedvit/data.hpp"
#include "eedvit/dump.hpp"
#include "oracles.hpp"

using namespace eedvit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eedvit_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Grayscale autocorrelation length of one image: the first lag (averaged
/// over the horizontal and vertical directions) at which the normalized
/// circular autocorrelation drops below 1/e. Direct sums, no FFT.
double autocorrelation_length(const Image& img) {
  const std::size_t n = img.width;
  std::vector<double> g(n * n);
  double mean = 0;
  for (std::size_t i = 0; i < n * n; ++i) {
    g[i] = (img.pixels[3 * i] + img.pixels[3 * i + 1] + img.pixels[3 * i + 2]) / 3.0;
    mean += g[i];
  }
  mean /= static_cast<double>(n * n);
  double var = 0;
  for (double& v : g) {
    v -= mean;
    var += v * v;
  }
  if (var == 0) {
    return static_cast<double>(n);
  }
  auto first_drop = [&](bool horizontal) {
    for (std::size_t lag = 1; lag < n; ++lag) {
      double acc = 0;
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const std::size_t y2 = horizontal ? y : (y + lag) % n;
          const std::size_t x2 = horizontal ? (x + lag) % n : x;
          acc += g[y * n + x] * g[y2 * n + x2];
        }
      }
      if (acc / var < std::exp(-1.0)) {
        return static_cast<double>(lag);
      }
    }
    return static_cast<double>(n);
  };
  return 0.5 * (first_drop(true) + first_drop(false));
}

struct MeanSd {
  double mean = 0, sd = 0;
};

MeanSd corpus_autocorrelation(const ImageDataset& ds) {
  std::vector<double> v;
  for (const auto& img : ds.images) {
    v.push_back(autocorrelation_length(img));
  }
  MeanSd r;
  for (double x : v) {
    r.mean += x / static_cast<double>(v.size());
  }
  for (double x : v) {
    r.sd += (x - r.mean) * (x - r.mean) / static_cast<double>(v.size());
  }
  r.sd = std::sqrt(r.sd);
  return r;
}

/// Foreground mask of an object image: the pixels sharing the most frequent
/// exact RGB value (shapes are flat-colored, backgrounds are continuous).
std::vector<bool> modal_color_mask(const Image& img) {
  std::map<std::array<float, 3>, int> counts;
  const std::size_t n = img.height * img.width;
  for (std::size_t i = 0; i < n; ++i) {
    ++counts[{img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]}];
  }
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) {
      best = it;
    }
  }
  std::vector<bool> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = std::array<float, 3>{img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]} == best->first;
  }
  return mask;
}

/// Rotation/scale/translation-invariant shape features: the first two Hu
/// moment invariants and the fill ratio of the area against the radius of
/// gyration.
std::array<double, 3> shape_moments(const Image& img) {
  const auto mask = modal_color_mask(img);
  const std::size_t w = img.width;
  double m00 = 0, mx = 0, my = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      m00 += 1;
      mx += static_cast<double>(i % w);
      my += static_cast<double>(i / w);
    }
  }
  mx /= m00;
  my /= m00;
  double mu20 = 0, mu02 = 0, mu11 = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      const double dx = static_cast<double>(i % w) - mx;
      const double dy = static_cast<double>(i / w) - my;
      mu20 += dx * dx;
      mu02 += dy * dy;
      mu11 += dx * dy;
    }
  }
  const double n20 = mu20 / (m00 * m00), n02 = mu02 / (m00 * m00), n11 = mu11 / (m00 * m00);
  const double h1 = n20 + n02;
  const double h2 = (n20 - n02) * (n20 - n02) + 4 * n11 * n11;
  double rmax = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      const double dx = static_cast<double>(i % w) - mx;
      const double dy = static_cast<double>(i / w) - my;
      rmax = std::max(rmax, std::sqrt(dx * dx + dy * dy));
    }
  }
  return {h1 * 10, std::sqrt(h2) * 100, m00 / (std::numbers::pi * rmax * rmax + 1)};
}

} // namespace

TEST(Cifar100, HandBuiltTwoRecordFixture) {
  std::vector<std::uint8_t> bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<std::uint8_t>(7 + r)); // coarse
    bytes.push_back(static_cast<std::uint8_t>(42 + r)); // fine
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 1024; ++i) {
        bytes.push_back(static_cast<std::uint8_t>((i + 85 * c + 100 * r) % 256));
      }
    }
  }
  const auto dir = temp_dir("cifar");
  write_bytes(dir / "train.bin", bytes);
  const auto ds = load_cifar100((dir / "train.bin").string());
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{42, 43}));
  EXPECT_EQ(ds.image_size(), 32u);
  // Pixel (y=1, x=3) of record 1, green: plane index 35.
  EXPECT_EQ(ds.images[1].at(1, 3, 1), static_cast<float>((35 + 85 + 100) % 256) / 255.0f);
  EXPECT_EQ(ds.images[0].at(0, 0, 0), 0.0f);
  EXPECT_EQ(ds.images[0].at(31, 31, 2), static_cast<float>((1023 + 170) % 256) / 255.0f);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Cifar100, TruncatedFileIsFormatError) {
  std::vector<std::uint8_t> bytes(3074 + 100, 0);
  const auto dir = temp_dir("trunc");
  write_bytes(dir / "bad.bin", bytes);
  EXPECT_THROW(load_cifar100((dir / "bad.bin").string()), FormatError);
  EXPECT_THROW(load_cifar100((dir / "missing.bin").string()), IoError);
}

TEST(Cifar100, ZeroRecordIsBlackWithLabelZero) {
  const std::vector<std::uint8_t> bytes(3074, 0);
  const auto ds = decode_cifar100(bytes, 32, "zero");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.labels[0], 0);
  for (float v : ds.images[0].pixels) {
    EXPECT_EQ(v, 0.0f);
  }
}

TEST(Cifar100, EncodeDecodeRoundTrip) {
  const auto ds = gen_object_dataset(3, 5, 16);
  const auto bytes = encode_cifar100(ds);
  const auto back = decode_cifar100(bytes, 16, "rt");
  EXPECT_EQ(back.labels, ds.labels);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t p = 0; p < ds.images[i].pixels.size(); ++p) {
      EXPECT_NEAR(back.images[i].pixels[p], ds.images[i].pixels[p], 0.5 / 255.0 + 1e-6);
    }
  }
}

TEST(DatasetDir, WriteLoadRoundTrip) {
  const auto ds = gen_texture_dataset(4, 6, 16);
  const auto dir = temp_dir("dir");
  KeyValues extra;
  extra.set("kind", "texture");
  write_dataset_dir(dir.string(), ds, extra);
  const auto back = load_dataset(dir.string());
  EXPECT_EQ(back.size(), 6u);
  EXPECT_EQ(back.image_size(), 16u);
  EXPECT_EQ(back.source, "synthetic-texture");
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_THROW(load_dataset((dir / "nope").string()), IoError);
}

TEST(Generators, DeterministicPerSeed) {
  for (auto kind : {CorpusKind::texture, CorpusKind::object}) {
    const auto a = generate_corpus(kind, 11, 12, 32);
    const auto b = generate_corpus(kind, 11, 12, 32);
    const auto c = generate_corpus(kind, 12, 12, 32);
    ASSERT_EQ(a.size(), 12u);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
      differs = differs || a.images[i].pixels != c.images[i].pixels;
    }
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_TRUE(differs);
    EXPECT_NO_THROW(a.validate());
  }
}

TEST(Generators, EveryImageHasPositiveVariance) {
  for (auto kind : {CorpusKind::texture, CorpusKind::object}) {
    const auto ds = generate_corpus(kind, 13, 64, 32);
    for (const auto& img : ds.images) {
      double mean = 0, var = 0;
      for (float v : img.pixels) {
        mean += v;
      }
      mean /= static_cast<double>(img.pixels.size());
      for (float v : img.pixels) {
        var += (v - mean) * (v - mean);
      }
      EXPECT_GT(var, 0.0);
    }
  }
}

TEST(Generators, RejectEmptyRequests) {
  EXPECT_THROW(gen_texture_dataset(1, 0), DegenerateInput);
  EXPECT_THROW(gen_object_dataset(1, 0), DegenerateInput);
}

TEST(Generators, ObjectCoversFiveToFortyPercent) {
  const auto ds = gen_object_dataset(14, 300, 32);
  for (const auto& img : ds.images) {
    const auto mask = modal_color_mask(img);
    const double frac = static_cast<double>(std::count(mask.begin(), mask.end(), true)) / 1024.0;
    EXPECT_GE(frac, 0.05);
    EXPECT_LE(frac, 0.40);
  }
}

TEST(Generators, TextureAutocorrelationIsShortAndSeparated) {
  const auto tex = corpus_autocorrelation(gen_texture_dataset(15, 200, 32));
  const auto obj = corpus_autocorrelation(gen_object_dataset(15, 200, 32));
  EXPECT_LT(tex.mean, 0.25 * 32);
  // Corpus means +- 2 standard errors do not overlap. Per-image lengths do
  // overlap: a small shape over a cluttered background looks like texture.
  const double n = 200;
  const double tex_se = tex.sd / std::sqrt(n);
  const double obj_se = obj.sd / std::sqrt(n);
  EXPECT_LT(tex.mean + 2 * tex_se, obj.mean - 2 * obj_se) << "texture " << tex.mean << " +- " << tex_se
                                                          << ", object " << obj.mean << " +- " << obj_se;
}

TEST(Generators, ShapeNotPixelsCarriesTheObjectLabel) {
  const auto train = gen_object_dataset(16, 400, 32);
  const auto test = gen_object_dataset(17, 200, 32);

  // Shape-moment nearest-centroid classifier.
  std::array<std::array<double, 3>, object_classes> centroid{};
  std::array<int, object_classes> count{};
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto f = shape_moments(train.images[i]);
    for (int k = 0; k < 3; ++k) {
      centroid[static_cast<std::size_t>(train.labels[i])][static_cast<std::size_t>(k)] += f[static_cast<std::size_t>(k)];
    }
    ++count[static_cast<std::size_t>(train.labels[i])];
  }
  for (int c = 0; c < object_classes; ++c) {
    for (double& v : centroid[static_cast<std::size_t>(c)]) {
      v /= count[static_cast<std::size_t>(c)];
    }
  }
  int moment_correct = 0, pixel_correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto f = shape_moments(test.images[i]);
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < object_classes; ++c) {
      double d = 0;
      for (int k = 0; k < 3; ++k) {
        const double e = f[static_cast<std::size_t>(k)] - centroid[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
        d += e * e;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    moment_correct += best == test.labels[i];

    // Raw-pixel 1-nearest-neighbor.
    std::size_t nn = 0;
    double nn_d = INFINITY;
    for (std::size_t j = 0; j < train.size(); ++j) {
      double d = 0;
      for (std::size_t p = 0; p < test.images[i].pixels.size(); ++p) {
        const double e = test.images[i].pixels[p] - train.images[j].pixels[p];
        d += e * e;
      }
      if (d < nn_d) {
        nn_d = d;
        nn = j;
      }
    }
    pixel_correct += train.labels[nn] == test.labels[i];
  }
  EXPECT_LT(pixel_correct, moment_correct) << "pixel NN " << pixel_correct << " vs moments " << moment_correct
                                           << " of " << test.size();
}

TEST(ActivationDump, RoundTripIsBitExact) {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    ActivationDump d;
    d.config_hash = rng();
    d.tokens_per_image = 1 + rng() % 5;
    const auto rows = static_cast<Eigen::Index>(d.tokens_per_image * (1 + rng() % 4));
    const auto dim = static_cast<Eigen::Index>(1 + rng() % 9);
    for (std::size_t l = 0; l < 1 + rng() % 4; ++l) {
      d.layers.push_back({l, d.tokens_per_image, oracle::random_matrix(rows, dim, rng).cast<float>()});
    }
    const auto dir = temp_dir("dump");
    write_dump((dir / "a.eedv").string(), d);
    const auto back = read_dump((dir / "a.eedv").string());
    EXPECT_EQ(back.config_hash, d.config_hash);
    EXPECT_EQ(back.tokens_per_image, d.tokens_per_image);
    ASSERT_EQ(back.layers.size(), d.layers.size());
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
      EXPECT_EQ(back.layers[l].layer_index, d.layers[l].layer_index);
      EXPECT_EQ(std::memcmp(back.layers[l].tokens.data(), d.layers[l].tokens.data(),
                            sizeof(float) * static_cast<std::size_t>(d.layers[l].tokens.size())),
                0);
    }
  }
}

TEST(ActivationDump, CorruptionAndHeaderMismatch) {
  std::mt19937_64 rng(21);
  ActivationDump d;
  d.config_hash = 99;
  d.tokens_per_image = 3;
  d.layers.push_back({0, 3, oracle::random_matrix(6, 4, rng).cast<float>()});
  auto bytes = encode_dump(d);
  EXPECT_NO_THROW(decode_dump(bytes, "ok"));

  auto corrupt = bytes;
  corrupt[40] ^= 0x10;
  EXPECT_THROW(decode_dump(corrupt, "corrupt"), ChecksumMismatch);

  // D in the header says 5 while the block holds 6 x 4 values; the checksum
  // is recomputed so only the size check can object.
  auto mismatch = bytes;
  mismatch[33] = 5;
  mismatch.resize(mismatch.size() - 4);
  const std::uint32_t crc = crc32_of(mismatch);
  for (int i = 0; i < 4; ++i) {
    mismatch.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  }
  EXPECT_THROW(decode_dump(mismatch, "mismatch"), FormatError);

  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  EXPECT_THROW(decode_dump(wrong_magic, "magic"), FormatError);
  EXPECT_THROW(decode_dump(std::vector<std::uint8_t>(10), "short"), FormatError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  TrainConfig cfg;
  cfg.vit.image_size = 16;
  cfg.vit.embed_dim = 16;
  cfg.vit.num_layers = 2;
  cfg.vit.num_heads = 2;
  cfg.dino.out_dim = 16;
  cfg.dino.head_hidden = 16;
  cfg.dino.head_bottleneck = 8;
  cfg.dino.crops.global_size = 16;
  cfg.dino.crops.local_size = 8;
  cfg.batch_size = 2;
  cfg.max_steps = 2;
  const auto data = gen_object_dataset(1, 4, 16);
  const auto trained = train(data, cfg, 1, 3);

  const auto dir = temp_dir("ckpt");
  const auto path = (dir / "checkpoint.bin").string();
  write_checkpoint(path, cfg, trained.state);
  const auto back = read_checkpoint(path);
  EXPECT_TRUE(back.state.student == trained.state.student);
  EXPECT_TRUE(back.state.teacher == trained.state.teacher);
  EXPECT_EQ(back.state.center, trained.state.center);
  EXPECT_EQ(back.state.step, 2u);
  EXPECT_EQ(back.state.optimizer.steps_taken(), 2u);
  EXPECT_EQ(back.config.vit.embed_dim, 16u);
  EXPECT_EQ(back.config.dino.out_dim, 16u);
  for (std::size_t i = 0; i < back.state.student.size(); ++i) {
    EXPECT_EQ(back.state.optimizer.first_moment()[i], trained.state.optimizer.first_moment()[i]);
    EXPECT_EQ(back.state.optimizer.second_moment()[i], trained.state.optimizer.second_moment()[i]);
  }

  auto bytes = read_file(path);
  bytes[bytes.size() / 2] ^= 1;
  EXPECT_THROW(decode_checkpoint(bytes, "corrupt"), ChecksumMismatch);
  EXPECT_THROW(read_checkpoint((dir / "missing.bin").string()), IoError);
}
