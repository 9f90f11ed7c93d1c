# Config package initializer
