"""核心模块：模型、格式、泛函与实验流程"""
