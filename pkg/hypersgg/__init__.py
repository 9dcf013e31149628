"""hypersgg: 视频场景超图 (scene hypergraph) 的核心算法库

包括逐帧实体场景图、关系转移的过程图 (procedural graph)、
统一超图与随机游走超边采样、未来关系预测以及 Recall/mean-Recall 评估。
"""

__version__ = "0.1.0"
