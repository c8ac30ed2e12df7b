#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ddcal/autodiff.hpp"

namespace ddcal {

/// One instruction of a straight-line program over named values.
///
/// Supported ops and their arguments:
///   matmul a b | add a b | sub a b | mul a b | relu a | exp a | log a
///   scale a (num) | sum a | mean a | log_softmax a | l2_norm a
///   avg_pool2x2 a (C H W) | conv3x3 x w (C H W) | instance_norm a (C HW)
///   add_row_bias x b
struct Instr {
    std::string op;
    std::vector<std::string> args;
    std::string out;
    std::vector<std::size_t> dims{};
    double number = 0.0;
};

struct Program {
    std::vector<Instr> instrs;
    std::string output;

    Program& then(Instr i) {
        output = i.out;
        instrs.push_back(std::move(i));
        return *this;
    }
};

/// Result of evaluating a program: the output plus handles to the tracked inputs.
struct GradRecord {
    Var output;
    std::map<std::string, Var> inputs;
};

/// Runs `program` on `inputs`. Inputs named in `tracked` become differentiable leaves.
/// Shape errors name the failing primitive; a non-finite intermediate raises
/// NumericError naming the node.
GradRecord eval_graph(const std::map<std::string, Tensor>& inputs, const Program& program,
                      const std::set<std::string>& tracked = {});

/// Gradients of the record's scalar output with respect to the named inputs.
std::map<std::string, Tensor> grad(const GradRecord& record, const std::vector<std::string>& wrt);

}  // namespace ddcal
