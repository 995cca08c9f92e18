#include "spagan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spagan {

namespace {

void validateSet(const FeatureSet& s, const char* what) {
    if (s.count() < 2) {
        throw MetricError(std::string(what) + ": a feature set needs at least 2 vectors, got " +
                          std::to_string(s.count()));
    }
    if (!s.vectors.allFinite()) {
        throw MetricError(std::string(what) + ": non-finite feature values");
    }
}

// Elementwise cubic polynomial kernel over all row pairs.
Eigen::MatrixXd kernelMatrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double d = static_cast<double>(a.cols());
    return ((a * b.transpose()).array() / d + 1.0).cube().matrix();
}

FeatureSet subset(const FeatureSet& s, int size, std::mt19937_64& rng) {
    std::vector<int> idx(static_cast<std::size_t>(s.count()));
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates.
    for (int i = 0; i < size; ++i) {
        const int j = std::uniform_int_distribution<int>(i, s.count() - 1)(rng);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    FeatureSet out{Eigen::MatrixXd(size, s.dim()), s.extractorId};
    for (int i = 0; i < size; ++i) {
        out.vectors.row(i) = s.vectors.row(idx[static_cast<std::size_t>(i)]);
    }
    return out;
}

} // namespace

double polyKernel(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (u.size() != v.size() || u.size() < 1) {
        throw MetricError("poly_kernel: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()) + ")");
    }
    const double t = u.dot(v) / static_cast<double>(u.size()) + 1.0;
    return t * t * t;
}

double mmd2Unbiased(const FeatureSet& sx, const FeatureSet& sy) {
    validateSet(sx, "mmd2_unbiased");
    validateSet(sy, "mmd2_unbiased");
    if (sx.dim() != sy.dim()) {
        throw MetricError("mmd2_unbiased: feature dimensions differ");
    }
    const double m = sx.count();
    const double n = sy.count();
    const Eigen::MatrixXd kxx = kernelMatrix(sx.vectors, sx.vectors);
    const Eigen::MatrixXd kyy = kernelMatrix(sy.vectors, sy.vectors);
    const Eigen::MatrixXd kxy = kernelMatrix(sx.vectors, sy.vectors);
    const double xx = (kxx.sum() - kxx.trace()) / (m * (m - 1));
    const double yy = (kyy.sum() - kyy.trace()) / (n * (n - 1));
    const double xy = kxy.sum() / (m * n);
    return xx + yy - 2.0 * xy;
}

int defaultSubsetSize(const FeatureSet& a, const FeatureSet& b) {
    return std::min({kDefaultKidSubset, a.count(), b.count()});
}

KidReport kid(const FeatureSet& sx, const FeatureSet& sy, int subsetSize, int repetitions, std::mt19937_64& rng) {
    if (repetitions < 1) {
        throw MetricError("kid: repetitions must be >= 1");
    }
    if (subsetSize < 2 || subsetSize > std::min(sx.count(), sy.count())) {
        throw MetricError("kid: subset size " + std::to_string(subsetSize) + " must lie in [2, " +
                          std::to_string(std::min(sx.count(), sy.count())) + "]");
    }
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(repetitions));
    for (int r = 0; r < repetitions; ++r) {
        const FeatureSet a = subset(sx, subsetSize, rng);
        const FeatureSet b = subset(sy, subsetSize, rng);
        values.push_back(mmd2Unbiased(a, b));
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / repetitions;
    double var = 0;
    for (double v : values) {
        var += (v - mean) * (v - mean);
    }
    var /= repetitions;
    KidReport report;
    report.mean = 100.0 * mean;
    report.std = 100.0 * std::sqrt(var);
    report.subsetSize = subsetSize;
    report.repetitions = repetitions;
    report.mode = KidMode::TargetOnly;
    report.extractorId = sx.extractorId;
    return report;
}

KidReport kidReportForTranslation(const FeatureSet& fakeTargets, const FeatureSet& realTargets,
                                  const FeatureSet& realSources, KidMode mode, int subsetSize, int repetitions,
                                  std::mt19937_64& rng) {
    KidReport target = kid(fakeTargets, realTargets, subsetSize, repetitions, rng);
    if (mode == KidMode::TargetOnly) {
        return target;
    }
    const KidReport source = kid(fakeTargets, realSources, subsetSize, repetitions, rng);
    KidReport joint = target;
    joint.mean = 0.5 * (target.mean + source.mean);
    joint.std = 0.5 * (target.std + source.std);
    joint.mode = KidMode::SourceAndTarget;
    return joint;
}

DomainClassifier::DomainClassifier(int imageSize, ClassifierConfig config) : imageSize_(imageSize), config_(config) {
    if (imageSize < 8) {
        throw SpecError("domain classifier needs images of at least 8x8");
    }
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 0xc1a5u};
    std::mt19937_64 rng(seq);
    const int b = config.baseWidth;
    const float slope = 0.2f;
    add("conv0", std::make_unique<Conv2d<float>>(3, b, 4, 2, 1, Padding::Zero, rng));
    add("", std::make_unique<LeakyRelu<float>>(slope));
    add("conv1", std::make_unique<Conv2d<float>>(b, 2 * b, 4, 2, 1, Padding::Zero, rng));
    add("", std::make_unique<LeakyRelu<float>>(slope));
    add("conv2", std::make_unique<Conv2d<float>>(2 * b, 4 * b, 4, 2, 1, Padding::Zero, rng));
    add("", std::make_unique<LeakyRelu<float>>(slope));
    add("", std::make_unique<GlobalAvgPool<float>>());
    poolIndex_ = lastIndex();
    add("head", std::make_unique<Conv2d<float>>(4 * b, 2, 1, 1, 0, Padding::Zero, rng));
    featureDim_ = 4 * b;
}

Tensor<float> DomainClassifier::logits(const Tensor<float>& image, Trace* trace, Tensor<float>* pooled) const {
    if (image.channels != 3 || image.height != imageSize_ || image.width != imageSize_) {
        throw ShapeError("domain classifier expects 3x" + std::to_string(imageSize_) + "x" +
                         std::to_string(imageSize_) + " images, got " + image.shapeString());
    }
    return run(image, trace, poolIndex_, pooled);
}

void DomainClassifier::train(const DatasetPair& data) {
    if (data.domainX.empty() || data.domainY.empty()) {
        throw MetricError("domain classifier: both domains need images");
    }
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32), 0x7a11u};
    std::mt19937_64 rng(seq);
    auto params = parameters();
    Adam<float> opt(params, AdamConfig{config_.learningRate, 0.9, 0.999, 1e-8});
    std::bernoulli_distribution coin(0.5);
    for (int s = 0; s < config_.steps; ++s) {
        const int label = s % 2;
        const auto& domain = label == 0 ? data.domainX : data.domainY;
        const std::size_t i = std::uniform_int_distribution<std::size_t>(0, domain.size() - 1)(rng);
        const Tensor<float> img = coin(rng) ? flipHorizontal(domain[i].pixels) : domain[i].pixels;
        zeroGrad();
        Trace trace;
        const Tensor<float> z = logits(img, &trace, nullptr);
        // Softmax cross-entropy gradient: p - onehot.
        const float zmax = std::max(z.data(0, 0), z.data(1, 0));
        const float e0 = std::exp(z.data(0, 0) - zmax);
        const float e1 = std::exp(z.data(1, 0) - zmax);
        Tensor<float> grad(2, 1, 1);
        grad.data(0, 0) = e0 / (e0 + e1) - (label == 0 ? 1.0f : 0.0f);
        grad.data(1, 0) = e1 / (e0 + e1) - (label == 1 ? 1.0f : 0.0f);
        runBackward(trace, grad, -1, nullptr, ParamGrad::Accumulate);
        opt.step(params);
    }
    dataFingerprint_ = datasetFingerprint(data);
    trained_ = true;
}

Eigen::VectorXd DomainClassifier::features(const Tensor<float>& image) const {
    Tensor<float> pooled;
    logits(image, nullptr, &pooled);
    return pooled.data.col(0).cast<double>();
}

double DomainClassifier::probabilityY(const Tensor<float>& image) const {
    const Tensor<float> z = logits(image, nullptr, nullptr);
    const double d = static_cast<double>(z.data(1, 0)) - static_cast<double>(z.data(0, 0));
    return 1.0 / (1.0 + std::exp(-d));
}

int DomainClassifier::predict(const Tensor<float>& image) const {
    if (!trained_) {
        throw MetricError("domain classifier has not been trained");
    }
    const Tensor<float> z = logits(image, nullptr, nullptr);
    return z.data(1, 0) > z.data(0, 0) ? 1 : 0;
}

std::string DomainClassifier::id() const {
    return "domain-classifier/d" + std::to_string(featureDim_) + "/w" + std::to_string(config_.baseWidth) + "/steps" +
           std::to_string(config_.steps) + "/seed" + std::to_string(config_.seed) + "/data" +
           (dataFingerprint_.empty() ? "untrained" : dataFingerprint_);
}

FeatureSet extractFeatures(const std::vector<Tensor<float>>& images, const FeatureExtractor& extractor) {
    if (images.empty()) {
        throw MetricError("extract_features: empty image batch");
    }
    FeatureSet out;
    out.extractorId = extractor.id();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Eigen::VectorXd f = extractor.features(images[i]);
        if (i == 0) {
            out.vectors.resize(static_cast<Eigen::Index>(images.size()), f.size());
        }
        out.vectors.row(static_cast<Eigen::Index>(i)) = f.transpose();
    }
    return out;
}

double classifierAccuracy(const std::vector<Tensor<float>>& generated, const std::vector<int>& labels,
                          const DomainPredictor& classifier) {
    if (generated.empty()) {
        throw MetricError("classifier_accuracy: empty batch");
    }
    if (generated.size() != labels.size()) {
        throw MetricError("classifier_accuracy: one label per image required");
    }
    if (!classifier.trained()) {
        throw MetricError("classifier_accuracy: classifier has not been trained");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        correct += classifier.predict(generated[i]) == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(generated.size());
}

} // namespace spagan
