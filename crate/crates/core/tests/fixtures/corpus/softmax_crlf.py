import torch
import torch.nn as nn
from torch.utils.cpp_extension import load_inline

softmax_src = """
#include <torch/extension.h>
__global__ void softmax_kernel(const float* x, float* y, int n) {
    extern __shared__ float buf[];
    int t = threadIdx.x;
    buf[t] = t < n ? expf(x[t]) : 0.0f;
    __syncthreads();
    float s = 0.0f;
    for (int i = 0; i < n; ++i) s += buf[i];
    if (t < n) y[t] = buf[t] / s;
}
torch::Tensor softmax_cuda(torch::Tensor x) {
    auto y = torch::empty_like(x);
    int n = x.numel();
    softmax_kernel<<<1, n, n * sizeof(float)>>>(x.data_ptr<float>(), y.data_ptr<float>(), n);
    return y;
}
"""

softmax_cpp = "torch::Tensor softmax_cuda(torch::Tensor x);"
softmax = load_inline("softmax", softmax_cpp, softmax_src, ["softmax_cuda"])


class ModelNew(nn.Module):
    def forward(self, x):
        return softmax.softmax_cuda(x)
