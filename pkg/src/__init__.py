# Source package initializer
