#include "clipmem/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.hpp"

namespace clipmem::datagen {

namespace {

constexpr char kMagic[5] = {'C', 'M', 'V', 'D', '1'};
constexpr std::uint32_t kVersion = 1;

Rng video_rng(std::uint64_t seed, std::uint64_t video_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(video_id),
                      static_cast<std::uint32_t>(video_id >> 32), 0x56494445u};
    return Rng(seq);
}

std::vector<std::size_t> balanced_labels(std::size_t count, Rng& rng) {
    std::vector<std::size_t> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = i % XorMotifTask::num_classes;
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

VideoSample make_video(const XorMotifTask& task, const std::vector<std::vector<double>>& motifs,
                       std::uint64_t seed, std::uint64_t video_id, std::size_t label) {
    Rng rng = video_rng(seed, video_id);
    const std::size_t T = task.num_frames;
    const std::size_t F = task.feature_dim;
    const std::size_t half = T / 2;

    VideoSample v;
    v.video_id = video_id;
    v.label = label;
    v.num_frames = T;
    v.feature_dim = F;
    v.frames.assign(T * F, 0.0);

    std::uniform_int_distribution<std::size_t> coin(0, 1);
    std::uniform_int_distribution<std::size_t> first(0, half - 1);
    std::uniform_int_distribution<std::size_t> second(half, T - 1);
    const std::size_t i = coin(rng);
    const std::size_t j = i ^ label;
    const std::size_t t_a = first(rng);
    const std::size_t t_b = second(rng);

    if (task.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, task.noise_sigma);
        for (double& x : v.frames) x = noise(rng);
    }
    for (std::size_t f = 0; f < F; ++f) {
        v.frames[t_a * F + f] += motifs[i][f];
        v.frames[t_b * F + f] += motifs[2 + j][f];
    }
    return v;
}

}  // namespace

numcore::Tensor VideoSample::frames_tensor(std::size_t start, std::size_t length) const {
    if (start + length > num_frames) {
        throw LengthError("frames_tensor: window [" + std::to_string(start) + ", " +
                          std::to_string(start + length) + ") exceeds " +
                          std::to_string(num_frames) + " frames");
    }
    const auto first = frames.begin() + static_cast<std::ptrdiff_t>(start * feature_dim);
    return numcore::Tensor::from(
        {length, feature_dim},
        std::vector<double>(first, first + static_cast<std::ptrdiff_t>(length * feature_dim)));
}

std::vector<std::vector<double>> task_motifs(const XorMotifTask& task) {
    const std::size_t F = task.feature_dim;
    if (F < 4) throw ConfigError("XorMotifTask: feature_dim must be >= 4 to hold 4 orthogonal motifs");
    Rng rng(task.motif_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> basis;
    while (basis.size() < 4) {
        std::vector<double> v(F);
        for (double& x : v) x = gauss(rng);
        // Two Gram-Schmidt passes for orthogonality to ~1e-16.
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& u : basis) {
                double dot = 0.0;
                for (std::size_t f = 0; f < F; ++f) dot += v[f] * u[f];
                for (std::size_t f = 0; f < F; ++f) v[f] -= dot * u[f];
            }
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-6) continue;
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    return basis;
}

Dataset gen_dataset(const XorMotifTask& task, std::uint64_t seed) {
    if (task.num_frames < 4) throw ConfigError("XorMotifTask: num_frames must be >= 4");
    if (task.n_train == 0 || task.n_val == 0) throw ConfigError("XorMotifTask: counts must be > 0");
    if (task.noise_sigma < 0.0) throw ConfigError("XorMotifTask: noise_sigma must be >= 0");
    const auto motifs = task_motifs(task);

    std::seed_seq label_seq{static_cast<std::uint32_t>(seed),
                            static_cast<std::uint32_t>(seed >> 32), 0x4C41424Cu};
    Rng label_rng(label_seq);
    const auto train_labels = balanced_labels(task.n_train, label_rng);
    const auto val_labels = balanced_labels(task.n_val, label_rng);

    Dataset ds;
    ds.train.reserve(task.n_train);
    ds.val.reserve(task.n_val);
    for (std::size_t n = 0; n < task.n_train; ++n)
        ds.train.push_back(make_video(task, motifs, seed, n, train_labels[n]));
    for (std::size_t n = 0; n < task.n_val; ++n)
        ds.val.push_back(make_video(task, motifs, seed, task.n_train + n, val_labels[n]));
    return ds;
}

std::vector<Clip> sample_clips(const VideoSample& video, std::size_t num_clips,
                               std::size_t length, Rng& rng) {
    if (length > video.num_frames) {
        throw LengthError("sample_clips: clip length " + std::to_string(length) +
                          " exceeds video length " + std::to_string(video.num_frames));
    }
    if (num_clips == 0) throw LengthError("sample_clips: need at least one clip");
    std::uniform_int_distribution<std::size_t> start(0, video.num_frames - length);
    std::vector<Clip> clips(num_clips);
    for (auto& c : clips) c = Clip{video.video_id, start(rng), length};
    return clips;
}

std::vector<Clip> uniform_test_crops(const VideoSample& video, std::size_t length,
                                     std::size_t num_crops) {
    if (length > video.num_frames) {
        throw LengthError("uniform_test_crops: clip length " + std::to_string(length) +
                          " exceeds video length " + std::to_string(video.num_frames));
    }
    if (num_crops == 0) throw LengthError("uniform_test_crops: need at least one crop");
    const double span = static_cast<double>(video.num_frames - length);
    std::vector<Clip> crops(num_crops);
    for (std::size_t i = 0; i < num_crops; ++i) {
        const double pos = num_crops == 1 ? span / 2.0
                                          : span * static_cast<double>(i) /
                                                static_cast<double>(num_crops - 1);
        crops[i] = Clip{video.video_id, static_cast<std::size_t>(std::lround(pos)), length};
    }
    return crops;
}

double bayes_single_clip_accuracy(const XorMotifTask& task, std::size_t length) {
    if (2 * length >= task.num_frames) {
        throw LengthError("bayes_single_clip_accuracy: clip length " + std::to_string(length) +
                          " is not below half of " + std::to_string(task.num_frames) + " frames");
    }
    // The label is independent of whichever single motif a clip can see.
    return 0.5;
}

void write_videos(const std::filesystem::path& path, const std::vector<VideoSample>& videos,
                  std::size_t num_frames, std::size_t feature_dim, std::size_t num_classes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    io::put_le(out, kVersion);
    io::put_le(out, io::checked_u32(videos.size(), "video count"));
    io::put_le(out, io::checked_u32(num_frames, "T"));
    io::put_le(out, io::checked_u32(feature_dim, "F"));
    io::put_le(out, io::checked_u32(num_classes, "C"));
    for (const auto& v : videos) {
        if (v.num_frames != num_frames || v.feature_dim != feature_dim ||
            v.frames.size() != num_frames * feature_dim) {
            throw FormatError("write_videos: video " + std::to_string(v.video_id) +
                              " does not match the header dimensions");
        }
        io::put_le(out, io::checked_u32(v.label, "label"));
        for (double x : v.frames) io::put_f64(out, x);
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

VideoFile read_videos(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
        throw FormatError(path.string() + ": not a CMVD1 dataset");
    try {
        const auto version = io::get_le<std::uint32_t>(in);
        if (version != kVersion)
            throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
        VideoFile file;
        const auto count = io::get_le<std::uint32_t>(in);
        file.num_frames = io::get_le<std::uint32_t>(in);
        file.feature_dim = io::get_le<std::uint32_t>(in);
        file.num_classes = io::get_le<std::uint32_t>(in);
        file.videos.reserve(count);
        for (std::uint32_t n = 0; n < count; ++n) {
            VideoSample v;
            v.video_id = n;
            v.label = io::get_le<std::uint32_t>(in);
            if (v.label >= file.num_classes)
                throw FormatError(path.string() + ": label out of range in video " +
                                  std::to_string(n));
            v.num_frames = file.num_frames;
            v.feature_dim = file.feature_dim;
            v.frames.resize(file.num_frames * file.feature_dim);
            for (double& x : v.frames) x = io::get_f64(in);
            file.videos.push_back(std::move(v));
        }
        if (in.peek() != std::char_traits<char>::eof())
            throw FormatError(path.string() + ": trailing bytes after last video");
        return file;
    } catch (const FormatError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace clipmem::datagen
