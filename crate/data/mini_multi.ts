@problemName MiniMulti
@univariate false
@classLabel true a b
@data
0.1,0.2,0.3:1,2,3:a
-0.1,-0.2,-0.3:3,2,1:b
0,0.5,1:2,2,2:b
