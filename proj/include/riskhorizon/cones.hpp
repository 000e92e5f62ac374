#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace riskhorizon {

// Primitive cone blocks. Free blocks arise internally as duals of Zero
// blocks and never appear in user-facing risk specifications.
enum class BlockType {
    Zero,
    Free,
    Nonneg,
    SecondOrder,
    RotatedSecondOrder,
    Exponential,
    ExponentialDual,
};

struct ConeBlock {
    BlockType type;
    int dim;
};

// Ordered product of primitive cone blocks.
class Cone {
  public:
    Cone() = default;
    explicit Cone(std::vector<ConeBlock> blocks);

    static Cone zero(int d);
    static Cone free(int d);
    static Cone nonneg(int d);
    static Cone second_order(int d);
    static Cone rotated_second_order(int d);
    static Cone exponential(int count = 1);
    static Cone exponential_dual(int count = 1);

    void append(BlockType type, int dim);
    void append(const Cone& other);

    int dim() const { return dim_; }
    const std::vector<ConeBlock>& blocks() const { return blocks_; }
    bool empty() const { return blocks_.empty(); }

    Cone dual() const;

    // True if every block is Zero or Nonneg (polytopic constraint set).
    bool is_polyhedral() const;

    // Serialization as ["zero:3", "nonneg:10", "soc:4", "rsoc:3", "exp"].
    std::vector<std::string> to_strings() const;
    static Cone from_strings(const std::vector<std::string>& tokens);

  private:
    std::vector<ConeBlock> blocks_;
    int dim_ = 0;
};

// Euclidean projection of v onto K, blockwise. The serial variant is the
// reference implementation; project() may shard blocks across OpenMP
// threads (results are identical, blocks are independent).
Eigen::VectorXd project(const Cone& cone, const Eigen::VectorXd& v);
Eigen::VectorXd project_serial(const Cone& cone, const Eigen::VectorXd& v);

// Projection of a single 3-vector onto the exponential cone
// cl{(x,y,z) | y e^{x/y} <= z, y > 0}.
Eigen::Vector3d project_exponential(const Eigen::Vector3d& v);

struct MembershipReport {
    bool inside;
    int worst_block;        // -1 when inside
    double worst_violation; // Euclidean distance of the worst block
};

MembershipReport membership(const Cone& cone, const Eigen::VectorXd& v,
                            double tol = 1e-9);

}  // namespace riskhorizon
