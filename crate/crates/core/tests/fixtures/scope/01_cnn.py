import numpy as np
from keras.layers import Dense


class CNN:
    def __init__(self, input_shape):
        self.input_shape = input_shape
        self.head = Dense(10)


def build(input_shape):
    cnn = CNN(input_shape)
    return cnn, np.zeros(input_shape)
