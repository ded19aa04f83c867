pub(crate) mod conv;
mod elementwise;
mod linalg;
mod pool;
mod softmax;

use crate::scalar::Scalar;
use crate::tape::{Node, Op};

/// Propagates the adjoint `g` of node `id` into the adjoints of its inputs.
pub(crate) fn backward<T: Scalar>(
    nodes: &[Node<T>],
    id: usize,
    g: &[T],
    adjoints: &mut [Option<Vec<T>>],
) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => elementwise::add_backward(nodes, *a, *b, g, adjoints),
        Op::Sub(a, b) => elementwise::sub_backward(nodes, *a, *b, g, adjoints),
        Op::Mul(a, b) => elementwise::mul_backward(nodes, *a, *b, g, adjoints),
        Op::Scale(a, s) => elementwise::scale_backward(nodes, *a, *s, g, adjoints),
        Op::Relu(a) => elementwise::relu_backward(nodes, *a, g, adjoints),
        Op::Sum(a) => elementwise::sum_backward(nodes, *a, g, adjoints),
        Op::Mean(a) => elementwise::mean_backward(nodes, *a, g, adjoints),
        Op::Reshape(a) => elementwise::reshape_backward(nodes, *a, g, adjoints),
        Op::ExpandRows(a) => elementwise::expand_rows_backward(nodes, *a, g, adjoints),
        Op::MatMul(a, b) => linalg::matmul_backward(nodes, *a, *b, g, adjoints),
        Op::Conv2d {
            input,
            kernel,
            bias,
            geom,
            cols,
        } => conv::conv2d_backward(nodes, *input, *kernel, *bias, geom, cols, g, adjoints),
        Op::MaxPool2d { input, argmax } => pool::maxpool_backward(nodes, *input, argmax, g, adjoints),
        Op::GlobalAvgPool(a) => pool::global_avg_pool_backward(nodes, *a, g, adjoints),
        Op::LogSoftmax(a) => softmax::log_softmax_backward(nodes, id, *a, g, adjoints),
        Op::CrossEntropy {
            logits,
            probs,
            target,
            rows,
        } => softmax::cross_entropy_backward(nodes, *logits, probs, target, *rows, g, adjoints),
    }
}
