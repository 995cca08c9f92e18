#pragma once

#include "spagan/data.hpp"
#include "spagan/networks.hpp"
#include "spagan/optim.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

namespace spagan {

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One feature vector per row.
struct FeatureSet {
    Eigen::MatrixXd vectors;
    std::string extractorId;

    int count() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
};

enum class KidMode { TargetOnly, SourceAndTarget };

/// Mean and standard deviation of the subset estimates, both scaled by 100.
struct KidReport {
    double mean = 0;
    double std = 0;
    int subsetSize = 0;
    int repetitions = 0;
    KidMode mode = KidMode::TargetOnly;
    std::string extractorId;
};

/// ((u . v) / d + 1)^3
double polyKernel(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v);

/// Unbiased (U-statistic) squared MMD under the cubic polynomial kernel. May be negative.
double mmd2Unbiased(const FeatureSet& sx, const FeatureSet& sy);

inline constexpr int kDefaultKidSubset = 100;
inline constexpr int kDefaultKidRepetitions = 10;

int defaultSubsetSize(const FeatureSet& a, const FeatureSet& b);

/// `repetitions` independent subset pairs of `subsetSize` rows (drawn without
/// replacement within each set); reports 100 x mean and 100 x population std.
KidReport kid(const FeatureSet& sx, const FeatureSet& sy, int subsetSize, int repetitions, std::mt19937_64& rng);

/// TARGET_ONLY compares fakes with real targets; SOURCE_AND_TARGET averages
/// that with the fakes-vs-real-sources KID (stds averaged likewise).
KidReport kidReportForTranslation(const FeatureSet& fakeTargets, const FeatureSet& realTargets,
                                  const FeatureSet& realSources, KidMode mode, int subsetSize, int repetitions,
                                  std::mt19937_64& rng);

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual Eigen::VectorXd features(const Tensor<float>& image) const = 0;
    virtual std::string id() const = 0;
};

/// Predicts a domain label: 0 = X, 1 = Y.
class DomainPredictor {
public:
    virtual ~DomainPredictor() = default;
    virtual int predict(const Tensor<float>& image) const = 0;
    virtual bool trained() const = 0;
};

struct ClassifierConfig {
    int baseWidth = 8;
    int steps = 600;
    double learningRate = 1e-3;
    std::uint64_t seed = 0;
};

/// Small strided-conv classifier of X vs Y. Its globally pooled penultimate
/// layer doubles as the feature extractor for KID.
class DomainClassifier final : public Network<float>, public FeatureExtractor, public DomainPredictor {
public:
    DomainClassifier(int imageSize, ClassifierConfig config = {});

    /// Adam on softmax cross-entropy, one labelled image per step, alternating domains.
    void train(const DatasetPair& data);

    Eigen::VectorXd features(const Tensor<float>& image) const override;
    int predict(const Tensor<float>& image) const override;
    bool trained() const override { return trained_; }
    std::string id() const override;

    /// Softmax probability of domain Y.
    double probabilityY(const Tensor<float>& image) const;

    int featureDim() const { return featureDim_; }

private:
    Tensor<float> logits(const Tensor<float>& image, Trace* trace, Tensor<float>* pooled) const;

    int imageSize_;
    ClassifierConfig config_;
    int featureDim_ = 0;
    int poolIndex_ = -1;
    bool trained_ = false;
    std::string dataFingerprint_;
};

FeatureSet extractFeatures(const std::vector<Tensor<float>>& images, const FeatureExtractor& extractor);

/// Fraction of images whose predicted domain equals their label (the intended target).
double classifierAccuracy(const std::vector<Tensor<float>>& generated, const std::vector<int>& labels,
                          const DomainPredictor& classifier);

} // namespace spagan
