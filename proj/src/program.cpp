#include "ddcal/program.hpp"

#include "ddcal/error.hpp"

namespace ddcal {

namespace {

void need(const Instr& in, std::size_t args, std::size_t dims = 0) {
    if (in.args.size() != args || in.dims.size() != dims)
        throw UsageError("eval_graph: '" + in.op + "' expects " + std::to_string(args) + " args and " +
                         std::to_string(dims) + " dims");
}

}  // namespace

GradRecord eval_graph(const std::map<std::string, Tensor>& inputs, const Program& program,
                      const std::set<std::string>& tracked) {
    GradRecord rec;
    std::map<std::string, Var> env;
    for (const auto& [name, t] : inputs) {
        Var v(t, tracked.contains(name));
        env[name] = v;
        rec.inputs[name] = v;
    }
    for (const auto& name : tracked)
        if (!inputs.contains(name)) throw UsageError("eval_graph: tracked input '" + name + "' not provided");

    auto arg = [&](const Instr& in, std::size_t i) -> const Var& {
        auto it = env.find(in.args[i]);
        if (it == env.end()) throw UsageError("eval_graph: unknown value '" + in.args[i] + "'");
        return it->second;
    };

    for (const Instr& in : program.instrs) {
        Var r;
        const std::string& op = in.op;
        if (op == "matmul") { need(in, 2); r = ops::matmul(arg(in, 0), arg(in, 1)); }
        else if (op == "add") { need(in, 2); r = ops::add(arg(in, 0), arg(in, 1)); }
        else if (op == "sub") { need(in, 2); r = ops::sub(arg(in, 0), arg(in, 1)); }
        else if (op == "mul") { need(in, 2); r = ops::mul(arg(in, 0), arg(in, 1)); }
        else if (op == "add_row_bias") { need(in, 2); r = ops::add_row_bias(arg(in, 0), arg(in, 1)); }
        else if (op == "relu") { need(in, 1); r = ops::relu(arg(in, 0)); }
        else if (op == "exp") { need(in, 1); r = ops::exp(arg(in, 0)); }
        else if (op == "log") { need(in, 1); r = ops::log(arg(in, 0)); }
        else if (op == "scale") { need(in, 1); r = ops::scale(arg(in, 0), in.number); }
        else if (op == "sum") { need(in, 1); r = ops::sum(arg(in, 0)); }
        else if (op == "mean") { need(in, 1); r = ops::mean(arg(in, 0)); }
        else if (op == "log_softmax") { need(in, 1); r = ops::log_softmax(arg(in, 0)); }
        else if (op == "l2_norm") { need(in, 1); r = ops::l2_norm(arg(in, 0)); }
        else if (op == "avg_pool2x2") {
            need(in, 1, 3);
            r = ops::avg_pool2x2(arg(in, 0), in.dims[0], in.dims[1], in.dims[2]);
        } else if (op == "conv3x3") {
            need(in, 2, 3);
            r = ops::conv3x3(arg(in, 0), arg(in, 1), in.dims[0], in.dims[1], in.dims[2]);
        } else if (op == "instance_norm") {
            need(in, 1, 2);
            r = ops::instance_norm(arg(in, 0), in.dims[0], in.dims[1]);
        } else {
            throw UsageError("eval_graph: unknown primitive '" + op + "'");
        }
        env[in.out] = r;
    }
    auto it = env.find(program.output);
    if (it == env.end()) throw UsageError("eval_graph: output '" + program.output + "' never produced");
    rec.output = it->second;
    return rec;
}

std::map<std::string, Tensor> grad(const GradRecord& record, const std::vector<std::string>& wrt) {
    std::vector<Var> leaves;
    for (const auto& name : wrt) {
        auto it = record.inputs.find(name);
        if (it == record.inputs.end()) throw UsageError("grad: unknown input '" + name + "'");
        if (!it->second.requires_grad()) throw UsageError("grad: input '" + name + "' is not tracked");
        leaves.push_back(it->second);
    }
    auto g = grad_values(record.output, leaves);
    std::map<std::string, Tensor> out;
    for (std::size_t i = 0; i < wrt.size(); ++i) out[wrt[i]] = std::move(g[i]);
    return out;
}

}  // namespace ddcal
